#include "vlmkit/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <functional>
#include <iostream>

#include "vlmkit/corpus.hpp"
#include "vlmkit/error.hpp"
#include "vlmkit/util/digest.hpp"
#include "vlmkit/util/rng.hpp"

namespace vlmkit::pipeline {

using corpus::Manifest;
using mixer::StageId;
using mixer::StagePlan;
using model::ToyVlm;
using nlohmann::json;

namespace {

constexpr size_t kDefaultTextSteps = 50;
constexpr size_t kDefaultAlignSteps = 100;
constexpr size_t kDefaultInstructSteps = 200;

std::string now_utc() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw IoError("cannot read file: " + p.string());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

fs::path resolve_rel(const fs::path& base, const std::string& p) {
    fs::path path(p);
    if (path.is_relative()) path = base / path;
    return fs::absolute(path).lexically_normal();
}

}  // namespace

// ---------------------------------------------------------------------------
// config
// ---------------------------------------------------------------------------

RunConfig RunConfig::load(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open run config: " + path.string());
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw ConfigError("malformed run config: " + std::string(e.what()));
    }

    RunConfig cfg;
    cfg.config_path = fs::absolute(path);
    cfg.raw = j;
    cfg.name = j.value("name", cfg.name);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.model = model::ModelConfig::from_json(j.value("model", json::object()));
    cfg.stages = mixer::StageConfig::from_json(j.value("stages", json::object()));
    cfg.stages.seed = cfg.seed;
    cfg.decode_max_new_tokens = j.value("decode_max_new_tokens", cfg.decode_max_new_tokens);

    const auto& optim = j.value("optim", json::object());
    cfg.optim.lr_lm = optim.value("lr_lm", cfg.optim.lr_lm);
    cfg.optim.lr_adapter = optim.value("lr_adapter", cfg.optim.lr_adapter);
    cfg.optim.weight_decay = optim.value("weight_decay", cfg.optim.weight_decay);
    cfg.optim.warmup_steps = optim.value("warmup_steps", cfg.optim.warmup_steps);

    const fs::path base = cfg.config_path.parent_path();
    const auto& paths = j.at("paths");
    cfg.text_medical = resolve_rel(base, paths.at("text_medical").get<std::string>());
    cfg.text_general = resolve_rel(base, paths.at("text_general").get<std::string>());
    cfg.captions_medical = resolve_rel(base, paths.at("captions_medical").get<std::string>());
    cfg.captions_general = resolve_rel(base, paths.at("captions_general").get<std::string>());
    cfg.vqa_medical = resolve_rel(base, paths.at("vqa_medical").get<std::string>());
    cfg.vqa_general = resolve_rel(base, paths.at("vqa_general").get<std::string>());

    const auto& cur = j.value("curation", json::object());
    auto load_pipe = [&cur](const char* key) {
        if (cur.contains(key)) return curation::PipelineConfig::from_json(cur.at(key));
        return curation::PipelineConfig{};  // empty pipeline: identity
    };
    cfg.text_pipeline = load_pipe("text");
    cfg.caption_pipeline = load_pipe("caption");
    cfg.vqa_pipeline = load_pipe("vqa");

    for (const auto& t : j.value("eval", json::array())) {
        EvalTarget target;
        target.dataset = resolve_rel(base, t.at("dataset").get<std::string>());
        target.task = t.at("task").get<std::string>();
        target.protocol = t.value("protocol", "");
        target.label = t.value("label", "");
        cfg.eval_targets.push_back(std::move(target));
    }
    cfg.validate();
    return cfg;
}

void RunConfig::validate() const {
    for (const fs::path* p : {&text_medical, &text_general, &captions_medical, &captions_general,
                              &vqa_medical, &vqa_general}) {
        if (!fs::exists(*p)) throw ConfigError("referenced corpus missing: " + p->string());
    }
    for (const auto& t : eval_targets) {
        if (!fs::exists(t.dataset)) {
            throw ConfigError("referenced eval dataset missing: " + t.dataset.string());
        }
        if (t.task != "vqa" && t.task != "qa" && t.task != "ic") {
            throw ConfigError("unknown eval task: " + t.task);
        }
        if (t.task == "qa" && t.protocol != "multiple_choice" && t.protocol != "yes_no_maybe") {
            throw ConfigError("qa eval needs protocol multiple_choice or yes_no_maybe");
        }
    }
}

// ---------------------------------------------------------------------------
// hashing / run manifest
// ---------------------------------------------------------------------------

std::string manifest_content_hash(const fs::path& manifest) {
    std::string acc = util::sha256_hex(file_bytes(manifest));
    const Manifest m = corpus::load_manifest(manifest, {.validate_assets = false});
    for (const auto& r : m.records) {
        if (const auto* img = corpus::sample_image(r)) {
            if (fs::exists(img->path)) acc += util::sha256_file_hex(img->path);
        }
    }
    return util::sha256_hex(acc);
}

RunManifest RunManifest::load(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open run manifest: " + path.string());
    json j;
    f >> j;
    RunManifest m;
    m.run_id = j.value("run_id", "");
    m.config_hash = j.value("config_hash", "");
    m.started_at = j.value("started_at", "");
    m.finished_at = j.value("finished_at", "");
    const json stages = j.value("stages", json::object());
    for (const auto& [name, s] : stages.items()) {
        StageStatus st;
        st.status = s.value("status", "pending");
        st.input_hash = s.value("input_hash", "");
        st.error = s.value("error", "");
        st.outputs = s.value("outputs", std::vector<std::string>{});
        m.stages[name] = std::move(st);
    }
    const json reports = j.value("reports", json::object());
    for (const auto& [k, v] : reports.items()) {
        m.reports[k] = v.get<std::string>();
    }
    return m;
}

void RunManifest::save(const fs::path& path) const {
    json stages_json = json::object();
    for (const auto& [name, s] : stages) {
        stages_json[name] = {{"status", s.status},
                             {"input_hash", s.input_hash},
                             {"error", s.error},
                             {"outputs", s.outputs}};
    }
    json j{{"run_id", run_id},         {"config_hash", config_hash},
           {"started_at", started_at}, {"finished_at", finished_at},
           {"stages", stages_json},    {"reports", reports}};
    if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write run manifest: " + path.string());
    f << j.dump(2) << "\n";
}

fs::path resolve_out_root(const RunConfig& config, const Options& options) {
    if (!options.out_root.empty()) return fs::absolute(options.out_root);
    if (const char* env = std::getenv("VLMKIT_OUT_ROOT")) return fs::absolute(env);
    return config.config_path.parent_path() / "runs";
}

// ---------------------------------------------------------------------------
// shared stage machinery
// ---------------------------------------------------------------------------

namespace {

struct CorpusSet {
    fs::path text_medical, text_general, captions_medical, captions_general, vqa_medical,
        vqa_general;
};

struct Runner {
    const RunConfig& config;
    uint64_t seed;
    fs::path run_dir;
    RunManifest manifest;
    fs::path manifest_path;

    Runner(const RunConfig& cfg, uint64_t seed_value, fs::path dir)
        : config(cfg), seed(seed_value), run_dir(std::move(dir)) {
        manifest_path = run_dir / "manifest.json";
        fs::create_directories(run_dir);
        const std::string cfg_hash = util::sha256_hex(file_bytes(config.config_path));
        if (fs::exists(manifest_path)) {
            manifest = RunManifest::load(manifest_path);
        } else {
            manifest.run_id = config.name;
            manifest.started_at = now_utc();
        }
        manifest.config_hash = cfg_hash;
    }

    // Runs `body` unless the stage is already done with a matching hash.
    // Returns true when the stage executed.
    bool stage(const std::string& name, const std::string& input_hash,
               const std::vector<fs::path>& outputs, const std::function<void()>& body) {
        auto& st = manifest.stages[name];
        bool outputs_present = true;
        for (const auto& p : outputs) outputs_present = outputs_present && fs::exists(p);
        if (st.status == "done" && st.input_hash == input_hash && outputs_present) {
            return false;
        }
        st.status = "running";
        st.input_hash = input_hash;
        st.error.clear();
        st.outputs.clear();
        for (const auto& p : outputs) st.outputs.push_back(p.string());
        manifest.save(manifest_path);
        try {
            body();
        } catch (const std::exception& e) {
            st.status = "failed";
            st.error = e.what();
            manifest.save(manifest_path);
            throw;
        }
        st.status = "done";
        manifest.save(manifest_path);
        return true;
    }
};

std::string section_dump(const json& raw, const char* key) {
    return raw.value(key, json::object()).dump();
}

// curate all six corpora into run_dir/curated, honoring per-kind pipelines
CorpusSet run_curate(Runner& r, const fs::path& curated_dir) {
    CorpusSet out;
    fs::create_directories(curated_dir);
    struct Item {
        const fs::path* in;
        fs::path* out;
        const curation::PipelineConfig* pipe;
        const char* name;
    };
    const RunConfig& cfg = r.config;
    Item items[] = {
        {&cfg.text_medical, &out.text_medical, &cfg.text_pipeline, "text_medical"},
        {&cfg.text_general, &out.text_general, &cfg.text_pipeline, "text_general"},
        {&cfg.captions_medical, &out.captions_medical, &cfg.caption_pipeline, "captions_medical"},
        {&cfg.captions_general, &out.captions_general, &cfg.caption_pipeline, "captions_general"},
        {&cfg.vqa_medical, &out.vqa_medical, &cfg.vqa_pipeline, "vqa_medical"},
        {&cfg.vqa_general, &out.vqa_general, &cfg.vqa_pipeline, "vqa_general"},
    };
    std::string hash_acc = section_dump(cfg.raw, "curation");
    for (const auto& item : items) hash_acc += manifest_content_hash(*item.in);
    const std::string input_hash = util::sha256_hex(hash_acc);

    std::vector<fs::path> outputs;
    for (const auto& item : items) {
        *item.out = curated_dir / (std::string(item.name) + ".jsonl");
        outputs.push_back(*item.out);
    }
    r.stage("curate", input_hash, outputs, [&]() {
        for (const auto& item : items) {
            const Manifest input = corpus::load_manifest(*item.in);
            auto [curated, report] = curation::run_pipeline(*item.pipe, input);
            curated.name = input.name;
            corpus::write_manifest(*item.out, curated);
            report.save(curated_dir / (std::string(item.name) + ".report.json"));
        }
    });
    return out;
}

// domain subsample (order-preserving) + ratio mix for one stage
Manifest realize_stage_dataset(const StagePlan& plan, const Manifest& domain,
                               const Manifest& general) {
    if (domain.records.size() < plan.domain_count) {
        throw DataError("insufficient domain data for " + mixer::to_string(plan.stage_id) +
                        ": need " + std::to_string(plan.domain_count) + ", pool has " +
                        std::to_string(domain.records.size()));
    }
    Manifest subset = domain;
    if (plan.domain_count < domain.records.size()) {
        util::Rng rng(util::derive_seed(plan.mix.seed, "domain.draw"));
        auto idx = rng.sample_without_replacement(domain.records.size(), plan.domain_count);
        std::sort(idx.begin(), idx.end());
        subset.records.clear();
        for (const size_t i : idx) subset.records.push_back(domain.records[i]);
    }
    return mixer::mix_datasets(subset, general, plan.mix);
}

struct MixOutputs {
    std::map<std::string, fs::path> stage_files;
};

MixOutputs run_mix(Runner& r, const CorpusSet& curated, const std::vector<StagePlan>& plans,
                   const fs::path& mixed_dir, const std::string& stage_prefix = "") {
    MixOutputs out;
    fs::create_directories(mixed_dir);
    std::string hash_acc = section_dump(r.config.raw, "stages") + std::to_string(r.seed);
    for (const auto& p :
         {curated.text_medical, curated.text_general, curated.captions_medical,
          curated.captions_general, curated.vqa_medical, curated.vqa_general}) {
        hash_acc += manifest_content_hash(p);
    }
    for (const auto& plan : plans) {
        hash_acc += mixer::to_string(plan.stage_id) + ":" + std::to_string(plan.domain_count) +
                    ":" + std::to_string(plan.mix.general_parts) + ":" +
                    std::to_string(plan.mix.seed);
    }
    const std::string input_hash = util::sha256_hex(hash_acc);

    std::vector<fs::path> outputs;
    for (const auto& plan : plans) {
        const fs::path p = mixed_dir / (mixer::to_string(plan.stage_id) + ".jsonl");
        out.stage_files[mixer::to_string(plan.stage_id)] = p;
        outputs.push_back(p);
    }
    r.stage(stage_prefix + "mix", input_hash, outputs, [&]() {
        for (const auto& plan : plans) {
            const bool text = plan.stage_id == StageId::text_sft_1 ||
                              plan.stage_id == StageId::text_sft_2;
            const bool align = plan.stage_id == StageId::mm_align;
            const Manifest domain = corpus::load_manifest(
                text ? curated.text_medical : align ? curated.captions_medical
                                                    : curated.vqa_medical);
            const Manifest general = corpus::load_manifest(
                text ? curated.text_general : align ? curated.captions_general
                                                    : curated.vqa_general);
            Manifest mixed = realize_stage_dataset(plan, domain, general);
            mixed.name = mixer::to_string(plan.stage_id);
            corpus::write_manifest(out.stage_files.at(mixer::to_string(plan.stage_id)), mixed);
        }
    });
    return out;
}

size_t effective_steps(const StagePlan& plan) {
    if (plan.steps > 0) return plan.steps;
    switch (plan.stage_id) {
        case StageId::text_sft_1:
        case StageId::text_sft_2:
            return kDefaultTextSteps;
        case StageId::mm_align:
            return kDefaultAlignSteps;
        case StageId::mm_instruct:
            return kDefaultInstructSteps;
    }
    return kDefaultTextSteps;
}

// one training stage with hash-gated skip; returns the checkpoint directory
fs::path run_train_stage(Runner& r, const StagePlan& plan_in, const fs::path& data_file,
                         const std::optional<fs::path>& prev_ckpt, const fs::path& ckpt_root,
                         const std::string& stage_prefix = "") {
    StagePlan plan = plan_in;
    plan.steps = effective_steps(plan);
    const std::string name = mixer::to_string(plan.stage_id);
    const fs::path ckpt_dir = ckpt_root / (stage_prefix.empty() ? name : stage_prefix + name);

    std::string hash_acc = section_dump(r.config.raw, "stages") +
                           section_dump(r.config.raw, "optim") +
                           section_dump(r.config.raw, "model") + std::to_string(r.seed) +
                           std::to_string(plan.steps) + manifest_content_hash(data_file);
    if (prev_ckpt) hash_acc += file_bytes(*prev_ckpt / "index.json");
    const std::string input_hash = util::sha256_hex(hash_acc);

    r.stage(stage_prefix + name, input_hash, {ckpt_dir / "index.json"}, [&]() {
        ToyVlm vlm = prev_ckpt ? ToyVlm::load(*prev_ckpt)
                               : ToyVlm(r.config.model, util::derive_seed(r.seed, "model.seed"));
        const Manifest data = corpus::load_manifest(data_file);
        training::TrainOptions opts;
        opts.optim = r.config.optim;
        opts.metrics_log = r.run_dir / "metrics.jsonl";
        opts.checkpoint_dir = ckpt_dir;
        const auto result = training::train_stage(vlm, plan, data.records, opts);
        if (result.aborted) {
            throw NumericError("stage " + name + " aborted on non-finite loss; last good "
                               "checkpoint retained at " + ckpt_dir.string());
        }
        std::cout << "[train] " << stage_prefix << name << " steps=" << plan.steps
                  << " final_loss=" << result.final_loss << "\n";
    });
    return ckpt_dir;
}

}  // namespace

// ---------------------------------------------------------------------------
// eval helpers
// ---------------------------------------------------------------------------

eval::MetricReport run_eval_target(const ToyVlm& vlm, const EvalTarget& target,
                                   int decode_max_new_tokens, int workers) {
    const Manifest dataset = corpus::load_manifest(target.dataset);
    eval::VlmUnderTest mut(vlm, {decode_max_new_tokens});
    eval::MetricReport report;
    if (target.task == "vqa") {
        report = eval::evaluate_vqa(mut, dataset, workers);
    } else if (target.task == "qa") {
        const auto protocol = target.protocol == "yes_no_maybe"
                                  ? eval::QaProtocol::yes_no_maybe
                                  : eval::QaProtocol::multiple_choice;
        report = eval::evaluate_qa(mut, dataset, protocol, workers);
    } else if (target.task == "ic") {
        report = eval::evaluate_ic(mut, dataset, workers);
    } else {
        throw ConfigError("unknown eval task: " + target.task);
    }
    if (!target.label.empty()) report.dataset = target.label;
    return report;
}

double report_average(const eval::MetricReport& report) {
    if (report.metrics.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& [k, v] : report.metrics) sum += v;
    return sum / static_cast<double>(report.metrics.size());
}

// ---------------------------------------------------------------------------
// reproduce
// ---------------------------------------------------------------------------

int cmd_reproduce(const RunConfig& config, const Options& options) {
    const uint64_t seed = options.seed_override.value_or(config.seed);
    const fs::path run_dir = resolve_out_root(config, options) / config.name;
    Runner r(config, seed, run_dir);

    try {
        const CorpusSet curated = run_curate(r, run_dir / "curated");

        mixer::StageConfig stage_cfg = config.stages;
        stage_cfg.seed = seed;
        const auto plans = mixer::build_stage_plans(stage_cfg);
        const MixOutputs mixed = run_mix(r, curated, plans, run_dir / "mixed");

        std::optional<fs::path> ckpt;
        for (const auto& plan : plans) {
            ckpt = run_train_stage(r, plan, mixed.stage_files.at(mixer::to_string(plan.stage_id)),
                                   ckpt, run_dir / "checkpoints");
        }

        // eval
        std::string hash_acc = section_dump(config.raw, "eval") +
                               std::to_string(config.decode_max_new_tokens) +
                               file_bytes(*ckpt / "index.json");
        for (const auto& t : config.eval_targets) hash_acc += manifest_content_hash(t.dataset);
        const std::string eval_hash = util::sha256_hex(hash_acc);
        std::vector<fs::path> report_files;
        for (const auto& t : config.eval_targets) {
            const std::string label =
                t.label.empty() ? t.dataset.stem().string() : t.label;
            report_files.push_back(run_dir / "reports" / (label + "." + t.task + ".json"));
        }
        r.stage("eval", eval_hash, report_files, [&]() {
            const ToyVlm vlm = ToyVlm::load(*ckpt);
            for (size_t i = 0; i < config.eval_targets.size(); ++i) {
                const auto& t = config.eval_targets[i];
                const auto report = run_eval_target(vlm, t, config.decode_max_new_tokens,
                                                    options.workers);
                report.save(report_files[i]);
                r.manifest.reports[report.dataset + "." + t.task] = report_files[i].string();
                std::cout << "[eval] " << report.dataset << " (" << t.task
                          << "): ave=" << report_average(report) << "\n";
            }
        });
    } catch (const ConfigError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "stage failure: " << e.what() << "\n";
        r.manifest.finished_at = now_utc();
        r.manifest.save(r.manifest_path);
        return kExitStageFailure;
    }

    r.manifest.finished_at = now_utc();
    r.manifest.save(r.manifest_path);
    std::cout << "run complete: " << run_dir.string() << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// grid
// ---------------------------------------------------------------------------

int cmd_grid(const RunConfig& config, const Options& options) {
    const uint64_t seed = options.seed_override.value_or(config.seed);
    const fs::path grid_dir = resolve_out_root(config, options) / (config.name + "-grid");
    Runner r(config, seed, grid_dir);

    json rows = json::array();
    bool any_failed = false;

    try {
        const CorpusSet curated = run_curate(r, grid_dir / "curated");

        // shared text stages
        mixer::StageConfig stage_cfg = config.stages;
        stage_cfg.seed = seed;
        const auto base_plans = mixer::build_stage_plans(stage_cfg);
        const MixOutputs text_mixed = run_mix(r, curated, base_plans, grid_dir / "mixed");
        std::optional<fs::path> text_ckpt;
        for (const auto& plan : base_plans) {
            if (plan.stage_id != StageId::text_sft_1 && plan.stage_id != StageId::text_sft_2) {
                continue;
            }
            text_ckpt = run_train_stage(
                r, plan, text_mixed.stage_files.at(mixer::to_string(plan.stage_id)), text_ckpt,
                grid_dir / "checkpoints");
        }

        const auto& align_ratios = mixer::grid_align_ratios();
        const auto& instruct_ratios = mixer::grid_instruct_ratios();
        for (size_t e = 0; e < align_ratios.size(); ++e) {
            for (size_t v = 0; v < instruct_ratios.size(); ++v) {
                const std::string cell =
                    "E" + std::to_string(e + 1) + "-V" + std::to_string(v + 1);
                json row{{"cell", cell},
                         {"align_ratio", align_ratios[e]},
                         {"instruct_ratio", instruct_ratios[v]}};
                try {
                    mixer::StageConfig cell_cfg = stage_cfg;
                    cell_cfg.align_ratio = align_ratios[e];
                    cell_cfg.instruct_ratio = instruct_ratios[v];
                    cell_cfg.grid_mode = true;
                    cell_cfg.seed = util::derive_seed(seed, "grid." + cell);
                    auto cell_plans = mixer::build_stage_plans(cell_cfg);

                    const std::string prefix = cell + ".";
                    const MixOutputs cell_mixed =
                        run_mix(r, curated, cell_plans, grid_dir / "cells" / cell / "mixed",
                                prefix);
                    std::optional<fs::path> ckpt = text_ckpt;
                    for (const auto& plan : cell_plans) {
                        if (plan.stage_id != StageId::mm_align &&
                            plan.stage_id != StageId::mm_instruct) {
                            continue;
                        }
                        ckpt = run_train_stage(
                            r, plan, cell_mixed.stage_files.at(mixer::to_string(plan.stage_id)),
                            ckpt, grid_dir / "cells" / cell / "checkpoints", prefix);
                    }

                    const ToyVlm vlm = ToyVlm::load(*ckpt);
                    for (const auto& t : config.eval_targets) {
                        if (t.task != "vqa") continue;  // the grid compares VQA benchmarks
                        const auto report = run_eval_target(vlm, t, config.decode_max_new_tokens,
                                                            options.workers);
                        const bool general = report.dataset == "toy-general";
                        json metrics = json::object();
                        for (const auto& [k, val] : report.metrics) metrics[k] = val;
                        row[general ? "general" : "domain"] = metrics;
                        row[general ? "general_ave" : "domain_ave"] = report_average(report);
                        const fs::path rp = grid_dir / "cells" / cell / "reports" /
                                            (report.dataset + ".vqa.json");
                        report.save(rp);
                    }
                    row["status"] = "done";
                    std::cout << "[grid] " << cell << " domain_ave=" << row.value("domain_ave", 0.0)
                              << " general_ave=" << row.value("general_ave", 0.0) << "\n";
                } catch (const std::exception& e) {
                    row["status"] = "failed";
                    row["error"] = e.what();
                    any_failed = true;
                    std::cout << "[grid] " << cell << " failed: " << e.what() << "\n";
                }
                rows.push_back(std::move(row));
            }
        }
    } catch (const ConfigError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "grid failure: " << e.what() << "\n";
        return kExitStageFailure;
    }

    json report{{"note", "general column uses the bundled toy-general benchmark, "
                         "not a published benchmark"},
                {"rows", rows}};
    const fs::path report_path = grid_dir / "reports" / "grid.json";
    fs::create_directories(report_path.parent_path());
    std::ofstream f(report_path, std::ios::binary);
    f << report.dump(2) << "\n";
    r.manifest.finished_at = now_utc();
    r.manifest.save(r.manifest_path);
    std::cout << "grid report: " << report_path.string() << "\n";
    return any_failed ? kExitStageFailure : kExitOk;
}

}  // namespace vlmkit::pipeline
