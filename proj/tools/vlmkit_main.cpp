// Command-line front end: curate | mix | train | eval | reproduce | grid | fixtures.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "vlmkit/corpus.hpp"
#include "vlmkit/curation.hpp"
#include "vlmkit/error.hpp"
#include "vlmkit/eval.hpp"
#include "vlmkit/fixtures.hpp"
#include "vlmkit/mixer.hpp"
#include "vlmkit/pipeline.hpp"
#include "vlmkit/training.hpp"
#include "vlmkit/util/rng.hpp"

namespace {

using namespace vlmkit;

double parse_ratio(const std::string& text) {
    // "1:0.5" -> 0.5 general parts per domain record
    const auto colon = text.find(':');
    if (colon == std::string::npos) throw ConfigError("ratio must look like 1:0.5");
    const double domain = std::stod(text.substr(0, colon));
    const double general = std::stod(text.substr(colon + 1));
    if (domain != 1.0) throw ConfigError("ratios are expressed against one domain part (1:k)");
    if (general < 0) throw ConfigError("general parts must be >= 0");
    return general;
}

int run_curate(const std::string& config_path, const std::string& in_path,
               const std::string& out_path, const std::string& report_path) {
    const auto config = config_path.empty() ? curation::PipelineConfig::default_pipeline()
                                            : curation::PipelineConfig::load(config_path);
    const corpus::Manifest input = corpus::load_manifest(in_path);
    auto [output, report] = curation::run_pipeline(config, input);
    output.name = input.name;
    corpus::write_manifest(out_path, output);
    if (!report_path.empty()) report.save(report_path);
    std::cout << "curate: " << input.records.size() << " -> " << output.records.size()
              << " records\n";
    return pipeline::kExitOk;
}

int run_mix(const std::string& domain_path, const std::string& general_path,
            const std::string& ratio, uint64_t seed, bool shuffle, const std::string& out_path) {
    const corpus::Manifest domain = corpus::load_manifest(domain_path);
    const corpus::Manifest general = corpus::load_manifest(general_path);
    const mixer::MixSpec spec{parse_ratio(ratio), seed, shuffle};
    const corpus::Manifest mixed = mixer::mix_datasets(domain, general, spec);
    corpus::write_manifest(out_path, mixed);
    std::cout << "mix: " << domain.records.size() << " domain + "
              << (mixed.records.size() - domain.records.size()) << " general -> "
              << mixed.records.size() << " records\n";
    return pipeline::kExitOk;
}

int run_train(const std::string& stage_name, const std::string& data_path,
              const std::string& init_ckpt, const std::string& out_ckpt, size_t steps,
              size_t batch_size, uint64_t seed, const std::string& metrics_path) {
    const auto stage = mixer::stage_from_string(stage_name);
    model::ModelConfig cfg;
    model::ToyVlm vlm = init_ckpt.empty()
                            ? model::ToyVlm(cfg, util::derive_seed(seed, "model.seed"))
                            : model::ToyVlm::load(init_ckpt);

    mixer::StagePlan plan;
    plan.stage_id = stage;
    plan.loss_kind = stage == mixer::StageId::mm_align ? mixer::LossKind::alignment
                     : stage == mixer::StageId::mm_instruct ? mixer::LossKind::instruction
                                                            : mixer::LossKind::causal_lm;
    const auto groups = training::stage_trainable_groups(stage);
    plan.trainable.assign(groups.begin(), groups.end());
    plan.steps = steps;
    plan.batch_size = batch_size;
    plan.mix.seed = seed;

    const corpus::Manifest data = corpus::load_manifest(data_path);
    training::TrainOptions opts;
    if (!metrics_path.empty()) opts.metrics_log = metrics_path;
    opts.checkpoint_dir = out_ckpt;
    const auto result = training::train_stage(vlm, plan, data.records, opts);
    if (result.aborted) {
        std::cerr << "training aborted on non-finite loss; last good checkpoint retained\n";
        return pipeline::kExitStageFailure;
    }
    std::cout << "train: stage " << stage_name << ", " << result.state.step
              << " steps, final loss " << result.final_loss << "\n";
    return pipeline::kExitOk;
}

int run_eval(const std::string& model_path, const std::string& dataset_path,
             const std::string& task, const std::string& protocol,
             const std::string& report_path, int max_new_tokens, int workers) {
    const model::ToyVlm vlm = model::ToyVlm::load(model_path);
    pipeline::EvalTarget target;
    target.dataset = dataset_path;
    target.task = task;
    target.protocol = protocol;
    const auto report = pipeline::run_eval_target(vlm, target, max_new_tokens, workers);
    if (!report_path.empty()) report.save(report_path);
    std::cout << "eval: " << report.dataset << " (" << task << ")\n";
    for (const auto& [k, v] : report.metrics) std::cout << "  " << k << " = " << v << "\n";
    return pipeline::kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale vision-language training and evaluation pipeline"};
    app.require_subcommand(1);

    std::string config_path, in_path, out_path, report_path;
    std::string domain_path, general_path, ratio = "1:0";
    std::string stage_name, data_path, init_ckpt, model_path, dataset_path, task, protocol;
    std::string metrics_path;
    uint64_t seed = 0;
    bool shuffle = false;
    size_t steps = 100, batch_size = 8;
    int workers = 1, max_new_tokens = 24;
    std::optional<uint64_t> seed_override;

    auto* curate = app.add_subcommand("curate", "run the data-quality pipeline on a manifest");
    curate->add_option("--config", config_path, "curation config (defaults to the full pipeline)");
    curate->add_option("--in", in_path, "input manifest")->required();
    curate->add_option("--out", out_path, "output manifest")->required();
    curate->add_option("--report", report_path, "filter report file");

    auto* mix = app.add_subcommand("mix", "mix domain and general manifests at a ratio");
    mix->add_option("--domain", domain_path)->required();
    mix->add_option("--general", general_path)->required();
    mix->add_option("--ratio", ratio, "domain:general ratio, e.g. 1:0.5");
    mix->add_option("--seed", seed);
    mix->add_flag("--shuffle", shuffle);
    mix->add_option("--out", out_path)->required();

    auto* train = app.add_subcommand("train", "train one stage on a manifest");
    train->add_option("--stage", stage_name, "text_sft_1|text_sft_2|mm_align|mm_instruct")
        ->required();
    train->add_option("--data", data_path)->required();
    train->add_option("--init", init_ckpt, "initial checkpoint (fresh model when omitted)");
    train->add_option("--out", out_path, "output checkpoint directory")->required();
    train->add_option("--steps", steps);
    train->add_option("--batch-size", batch_size);
    train->add_option("--seed", seed);
    train->add_option("--metrics", metrics_path, "metrics log (JSONL, appended)");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    eval_cmd->add_option("--model", model_path)->required();
    eval_cmd->add_option("--dataset", dataset_path)->required();
    eval_cmd->add_option("--task", task, "vqa|qa|ic")->required();
    eval_cmd->add_option("--protocol", protocol, "multiple_choice|yes_no_maybe (qa)");
    eval_cmd->add_option("--report", report_path);
    eval_cmd->add_option("--max-new-tokens", max_new_tokens);
    eval_cmd->add_option("--workers", workers);

    std::string run_config_path, out_root;
    auto* reproduce = app.add_subcommand("reproduce", "curate, mix, train all stages, evaluate");
    reproduce->add_option("--config", run_config_path)->required();
    reproduce->add_option("--out", out_root, "output root (default <config dir>/runs)");
    reproduce->add_option("--seed", seed_override);
    reproduce->add_option("--workers", workers);

    auto* grid = app.add_subcommand("grid", "run the 8-cell data-mixing ratio grid");
    grid->add_option("--config", run_config_path)->required();
    grid->add_option("--out", out_root);
    grid->add_option("--seed", seed_override);
    grid->add_option("--workers", workers);

    auto* fixtures_cmd = app.add_subcommand("fixtures", "generate the bundled synthetic corpus");
    fixtures_cmd->add_option("--out", out_path)->required();
    fixtures_cmd->add_option("--seed", seed);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*curate) return run_curate(config_path, in_path, out_path, report_path);
        if (*mix) return run_mix(domain_path, general_path, ratio, seed, shuffle, out_path);
        if (*train) {
            return run_train(stage_name, data_path, init_ckpt, out_path, steps, batch_size, seed,
                             metrics_path);
        }
        if (*eval_cmd) {
            return run_eval(model_path, dataset_path, task, protocol, report_path, max_new_tokens,
                            workers);
        }
        if (*reproduce || *grid) {
            const auto config = pipeline::RunConfig::load(run_config_path);
            pipeline::Options options;
            options.out_root = out_root;
            options.workers = workers;
            options.seed_override = seed_override;
            return *reproduce ? pipeline::cmd_reproduce(config, options)
                              : pipeline::cmd_grid(config, options);
        }
        if (*fixtures_cmd) {
            fixtures::generate_fixtures(out_path, seed == 0 ? 42 : seed);
            std::cout << "fixtures written to " << out_path << "\n";
            return pipeline::kExitOk;
        }
    } catch (const ConfigError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return pipeline::kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return pipeline::kExitStageFailure;
    }
    return pipeline::kExitValidation;
}
