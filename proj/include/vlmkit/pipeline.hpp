#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vlmkit/curation.hpp"
#include "vlmkit/eval.hpp"
#include "vlmkit/mixer.hpp"
#include "vlmkit/model.hpp"
#include "vlmkit/training.hpp"

namespace vlmkit::pipeline {

namespace fs = std::filesystem;

struct EvalTarget {
    fs::path dataset;  // absolute after load
    std::string task;  // vqa | qa | ic
    std::string protocol;  // multiple_choice | yes_no_maybe (qa only)
    std::string label;     // report name; defaults to the dataset name
};

struct RunConfig {
    std::string name = "run";
    uint64_t seed = 0;
    model::ModelConfig model;
    mixer::StageConfig stages;
    training::OptimConfig optim;
    int decode_max_new_tokens = 24;

    fs::path text_medical, text_general;
    fs::path captions_medical, captions_general;
    fs::path vqa_medical, vqa_general;

    curation::PipelineConfig text_pipeline, caption_pipeline, vqa_pipeline;
    std::vector<EvalTarget> eval_targets;

    fs::path config_path;
    nlohmann::json raw;  // as loaded; section dumps feed the stage hashes

    static RunConfig load(const fs::path& path);
    void validate() const;
};

// Exit codes shared with the CLI: 0 ok, 1 validation, 2 stage failure.
constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitStageFailure = 2;

struct Options {
    fs::path out_root;  // empty: config dir / "runs" (or VLMKIT_OUT_ROOT)
    int workers = 1;
    std::optional<uint64_t> seed_override;
};

// Content hash of a manifest: file bytes plus every referenced image's bytes.
std::string manifest_content_hash(const fs::path& manifest);

struct StageStatus {
    std::string status = "pending";  // pending | running | done | failed
    std::string input_hash;
    std::string error;
    std::vector<std::string> outputs;
};

struct RunManifest {
    std::string run_id;
    std::string config_hash;
    std::map<std::string, StageStatus> stages;
    std::map<std::string, std::string> reports;
    std::string started_at, finished_at;

    static RunManifest load(const fs::path& path);
    void save(const fs::path& path) const;
};

// curate -> mix -> train all four stages -> eval, with hash-gated resume.
int cmd_reproduce(const RunConfig& config, const Options& options);

// The 8-cell experiment grid: alignment ratios {1:0, 1:1} x instruction
// ratios {1:0, 1:0.2, 1:0.5, 1:1}, sharing curated data and text stages.
int cmd_grid(const RunConfig& config, const Options& options);

// Shared helpers (also used by the CLI subcommands and tests).
fs::path resolve_out_root(const RunConfig& config, const Options& options);
double report_average(const eval::MetricReport& report);
eval::MetricReport run_eval_target(const model::ToyVlm& vlm, const EvalTarget& target,
                                   int decode_max_new_tokens, int workers);

}  // namespace vlmkit::pipeline
