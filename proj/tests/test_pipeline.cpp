#include <doctest.h>

#include <cstdlib>

#include "test_util.hpp"
#include "vlmkit/corpus.hpp"
#include "vlmkit/curation.hpp"
#include "vlmkit/error.hpp"
#include "vlmkit/fixtures.hpp"
#include "vlmkit/pipeline.hpp"

using namespace vlmkit;
namespace fs = std::filesystem;

namespace {

// fixtures are expensive enough to build once per test binary
const fs::path& fixture_dir() {
    static const fs::path dir = [] {
        const fs::path d = test_util::temp_dir("fixtures_shared");
        fixtures::generate_fixtures(d, 42);
        return d;
    }();
    return dir;
}

}  // namespace

TEST_CASE("fixture generator writes loadable manifests") {
    const auto& dir = fixture_dir();
    for (const char* rel :
         {"train/text_medical.jsonl", "train/text_general.jsonl", "train/captions_medical.jsonl",
          "train/captions_general.jsonl", "train/vqa_medical.jsonl", "train/vqa_general.jsonl",
          "eval/vqa_domain.jsonl", "eval/vqa_general.jsonl", "eval/ic.jsonl", "eval/qa_mc.jsonl",
          "eval/qa_ynm.jsonl", "overfit/captions16.jsonl", "curation/raw_1000.jsonl"}) {
        CAPTURE(rel);
        CHECK_NOTHROW(corpus::load_manifest(dir / rel));
    }
    const auto raw = corpus::load_manifest(dir / "curation/raw_1000.jsonl");
    CHECK(raw.records.size() == 1000);
    const auto overfit = corpus::load_manifest(dir / "overfit/captions16.jsonl");
    CHECK(overfit.records.size() == 16);
    const auto ic = corpus::load_manifest(dir / "eval/ic.jsonl");
    CHECK(ic.classes.size() == 4);
}

TEST_CASE("fixture generation is deterministic") {
    const auto a = test_util::temp_dir("fixtures_det_a");
    const auto b = test_util::temp_dir("fixtures_det_b");
    fixtures::generate_fixtures(a, 7);
    fixtures::generate_fixtures(b, 7);
    CHECK(test_util::read_file(a / "train/text_medical.jsonl") ==
          test_util::read_file(b / "train/text_medical.jsonl"));
    CHECK(test_util::read_file(a / "curation/raw_1000.jsonl") ==
          test_util::read_file(b / "curation/raw_1000.jsonl"));
}

TEST_CASE("default pipeline on the bundled fixture exercises every filter") {
    const auto& dir = fixture_dir();
    const auto raw = corpus::load_manifest(dir / "curation/raw_1000.jsonl");
    const auto config = curation::PipelineConfig::load(dir / "curation/config.json");
    const auto [curated, report] = curation::run_pipeline(config, raw);

    CHECK(report.conserves());
    REQUIRE(report.filters.size() == 5);
    for (const auto& entry : report.filters) {
        CAPTURE(entry.name);
        CHECK(entry.rejected_count > 0);  // every planted issue class fires
    }
    CHECK(curated.records.size() < raw.records.size());
    // the pipeline keeps the bulk of the clean records
    CHECK(curated.records.size() > 700);
}

TEST_CASE("curated corpora stay large enough for the toy stage plans") {
    const auto& dir = fixture_dir();
    const auto config = pipeline::RunConfig::load(dir / "run_config.json");
    const auto text = corpus::load_manifest(config.text_medical);
    auto [curated_text, r1] = curation::run_pipeline(config.text_pipeline, text);
    CHECK(curated_text.records.size() >= 350);

    const auto caps = corpus::load_manifest(config.captions_medical);
    auto [curated_caps, r2] = curation::run_pipeline(config.caption_pipeline, caps);
    CHECK(curated_caps.records.size() >= 250);

    const auto caps_gen = corpus::load_manifest(config.captions_general);
    auto [curated_caps_gen, r3] = curation::run_pipeline(config.caption_pipeline, caps_gen);
    CHECK(curated_caps_gen.records.size() >= 250);

    const auto vqa = corpus::load_manifest(config.vqa_medical);
    auto [curated_vqa, r4] = curation::run_pipeline(config.vqa_pipeline, vqa);
    CHECK(curated_vqa.records.size() >= 60);

    const auto vqa_gen = corpus::load_manifest(config.vqa_general);
    auto [curated_vqa_gen, r5] = curation::run_pipeline(config.vqa_pipeline, vqa_gen);
    CHECK(curated_vqa_gen.records.size() >= 60);

    const auto text_gen = corpus::load_manifest(config.text_general);
    auto [curated_text_gen, r6] = curation::run_pipeline(config.text_pipeline, text_gen);
    CHECK(curated_text_gen.records.size() >= 200);
}

TEST_CASE("bundled raw multi-QA file expands with conserved pair counts") {
    const auto& dir = fixture_dir();
    const auto raw = corpus::load_multi_qa(dir / "raw/multi_qa.jsonl");
    REQUIRE(raw.size() == 10);
    size_t pairs = 0, expanded = 0;
    for (const auto& r : raw) {
        pairs += r.pairs.size();
        const auto samples = corpus::expand_multi_qa(r);
        expanded += samples.size();
        CHECK(samples[0].id == r.id + "#0");
        for (const auto& s : samples) CHECK(s.image->path == r.image.path);
    }
    CHECK(expanded == pairs);
    CHECK(expanded == 20);
}

TEST_CASE("metrics log is line-delimited step records") {
    const auto& dir = fixture_dir();
    const auto data = corpus::load_manifest(dir / "overfit/captions16.jsonl");
    model::ToyVlm vlm{model::ModelConfig{}, 3};
    mixer::StagePlan plan;
    plan.stage_id = mixer::StageId::mm_align;
    plan.loss_kind = mixer::LossKind::alignment;
    plan.trainable = {"projector"};
    plan.steps = 4;
    plan.batch_size = 4;
    training::TrainOptions opts;
    const auto log_path = test_util::temp_dir("pipeline_metrics") / "metrics.jsonl";
    opts.metrics_log = log_path;
    training::train_stage(vlm, plan, data.records, opts);

    std::ifstream f(log_path);
    std::string line;
    size_t lines = 0;
    while (std::getline(f, line)) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j.at("step").get<size_t>() == lines + 1);
        CHECK(j.at("stage") == "mm_align");
        CHECK(j.at("loss").is_number());
        CHECK(j.at("lr").is_number());
        CHECK(j.at("tokens").is_number());
        ++lines;
    }
    CHECK(lines == 4);
}

TEST_CASE("output root falls back to the environment variable") {
    const auto& dir = fixture_dir();
    const auto config = pipeline::RunConfig::load(dir / "run_config.json");
    const auto env_root = test_util::temp_dir("pipeline_envroot");
    setenv("VLMKIT_OUT_ROOT", env_root.c_str(), 1);
    CHECK(pipeline::resolve_out_root(config, {}) == fs::absolute(env_root));
    unsetenv("VLMKIT_OUT_ROOT");
    pipeline::Options explicit_root;
    explicit_root.out_root = dir / "elsewhere";
    CHECK(pipeline::resolve_out_root(config, explicit_root) == fs::absolute(dir / "elsewhere"));
}

TEST_CASE("run config loads and validates") {
    const auto& dir = fixture_dir();
    const auto config = pipeline::RunConfig::load(dir / "run_config.json");
    CHECK(config.name == "toy");
    CHECK(config.eval_targets.size() == 5);
    CHECK(fs::exists(config.vqa_general));

    // a missing corpus fails validation
    auto broken = config;
    broken.text_medical = dir / "missing.jsonl";
    CHECK_THROWS_AS(broken.validate(), ConfigError);
}

namespace {

// a reduced-budget copy of the bundled run config for end-to-end tests
fs::path test_scale_config(const fs::path& out_name) {
    const auto& dir = fixture_dir();
    auto j = nlohmann::json::parse(test_util::read_file(dir / "run_config.json"));
    j["name"] = out_name.string();
    j["stages"]["steps_text"] = 8;
    j["stages"]["steps_align"] = 8;
    j["stages"]["steps_instruct"] = 12;
    j["stages"]["batch_size"] = 4;
    j["decode_max_new_tokens"] = 12;
    const fs::path p = dir / (out_name.string() + "_config.json");
    test_util::write_file(p, j.dump(2));
    return p;
}

fs::file_time_type mtime(const fs::path& p) { return fs::last_write_time(p); }

}  // namespace

TEST_CASE("reproduce runs end to end, resumes, and re-runs only invalidated stages") {
    const auto config_path = test_scale_config("resume");
    const auto config = pipeline::RunConfig::load(config_path);
    pipeline::Options options;
    options.out_root = test_util::temp_dir("pipeline_resume");

    REQUIRE(pipeline::cmd_reproduce(config, options) == pipeline::kExitOk);
    const fs::path run_dir = options.out_root / "resume";
    size_t report_count = 0;
    for (const auto& e : fs::directory_iterator(run_dir / "reports")) {
        report_count += e.is_regular_file() ? 1 : 0;
    }
    CHECK(report_count >= 3);
    const auto manifest = pipeline::RunManifest::load(run_dir / "manifest.json");
    for (const auto& [name, st] : manifest.stages) {
        CAPTURE(name);
        CHECK(st.status == "done");
    }

    // rerun after success: every stage skipped, outputs untouched
    const fs::path ckpt_index = run_dir / "checkpoints/mm_instruct/index.json";
    const auto ckpt_before = mtime(ckpt_index);
    const fs::path a_report = fs::directory_iterator(run_dir / "reports")->path();
    const auto report_before = mtime(a_report);
    REQUIRE(pipeline::cmd_reproduce(config, options) == pipeline::kExitOk);
    CHECK(mtime(ckpt_index) == ckpt_before);
    CHECK(mtime(a_report) == report_before);

    // resume after losing a late artifact: only eval re-runs, byte-identically
    const std::string report_bytes = test_util::read_file(a_report);
    fs::remove_all(run_dir / "reports");
    REQUIRE(pipeline::cmd_reproduce(config, options) == pipeline::kExitOk);
    CHECK(mtime(ckpt_index) == ckpt_before);  // training stages skipped
    CHECK(test_util::read_file(a_report) == report_bytes);

    // editing only the eval section re-runs eval but reuses checkpoints
    auto j = nlohmann::json::parse(test_util::read_file(config_path));
    j["decode_max_new_tokens"] = 10;
    test_util::write_file(config_path, j.dump(2));
    const auto edited = pipeline::RunConfig::load(config_path);
    REQUIRE(pipeline::cmd_reproduce(edited, options) == pipeline::kExitOk);
    CHECK(mtime(ckpt_index) == ckpt_before);
    CHECK(mtime(a_report) != report_before);
}

TEST_CASE("identical config and seed give bit-identical checkpoints and reports") {
    const auto config_path = test_scale_config("determinism");
    const auto config = pipeline::RunConfig::load(config_path);

    pipeline::Options a, b;
    a.out_root = test_util::temp_dir("pipeline_det_a");
    b.out_root = test_util::temp_dir("pipeline_det_b");
    REQUIRE(pipeline::cmd_reproduce(config, a) == pipeline::kExitOk);
    REQUIRE(pipeline::cmd_reproduce(config, b) == pipeline::kExitOk);

    for (const char* rel :
         {"checkpoints/mm_instruct/lm.bin", "checkpoints/mm_instruct/index.json",
          "checkpoints/mm_align/projector.bin", "mixed/mm_instruct.jsonl"}) {
        CAPTURE(rel);
        CHECK(test_util::read_file(a.out_root / "determinism" / rel) ==
              test_util::read_file(b.out_root / "determinism" / rel));
    }
    for (const auto& e : fs::directory_iterator(a.out_root / "determinism/reports")) {
        const auto other = b.out_root / "determinism/reports" / e.path().filename();
        CAPTURE(e.path().filename().string());
        CHECK(test_util::read_file(e.path()) == test_util::read_file(other));
    }
}

TEST_CASE("input manifests are never mutated by pipeline commands") {
    const auto config_path = test_scale_config("isolation");
    const auto config = pipeline::RunConfig::load(config_path);
    const std::string before = test_util::read_file(config.vqa_medical);
    pipeline::Options options;
    options.out_root = test_util::temp_dir("pipeline_isolation");
    REQUIRE(pipeline::cmd_reproduce(config, options) == pipeline::kExitOk);
    CHECK(test_util::read_file(config.vqa_medical) == before);
}

TEST_CASE("manifest content hash tracks referenced image bytes") {
    const auto dir = test_util::temp_dir("pipeline_hash");
    util::save_image(dir / "img.pgm", test_util::test_image(32, 100));
    corpus::Manifest m;
    m.name = "h";
    m.task = corpus::Task::captioning;
    corpus::ImageCaptionSample s;
    s.id = "c0";
    s.image = {(dir / "img.pgm").string(), 32, 32, 1};
    s.caption = "x";
    m.records.emplace_back(s);
    corpus::write_manifest(dir / "m.jsonl", m);

    const auto h1 = pipeline::manifest_content_hash(dir / "m.jsonl");
    util::save_image(dir / "img.pgm", test_util::test_image(32, 101));
    const auto h2 = pipeline::manifest_content_hash(dir / "m.jsonl");
    CHECK(h1 != h2);  // same manifest bytes, different pixels
}
