#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "vlmkit/corpus.hpp"
#include "vlmkit/mixer.hpp"
#include "vlmkit/model.hpp"

namespace vlmkit::training {

using Eigen::MatrixXd;

enum class Reduction { mean, sum };

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

// NLL over masked positions: position i contributes -log softmax(logits[i-1])
// at target tokens[i]. Throws on an empty mask (degenerate sample).
double masked_nll(const MatrixXd& logits, std::span<const int> tokens,
                  std::span<const uint8_t> mask, Reduction reduction = Reduction::mean);

// Gradient of mean-reduced masked NLL w.r.t. logits.
MatrixXd masked_nll_backward(const MatrixXd& logits, std::span<const int> tokens,
                             std::span<const uint8_t> mask);

// Mask covers caption tokens only; the prefix holds the visual tokens.
double alignment_loss(const MatrixXd& logits, std::span<const int> tokens,
                      std::span<const uint8_t> mask, Reduction reduction = Reduction::mean);

// Mask covers the answer tokens of every turn; questions and visual tokens
// are excluded. Identical arithmetic to alignment_loss: with a single turn
// and an empty question the two coincide.
double instruction_loss(const MatrixXd& logits, std::span<const int> tokens,
                        std::span<const uint8_t> mask, Reduction reduction = Reduction::mean);

// ---------------------------------------------------------------------------
// freeze schedule
// ---------------------------------------------------------------------------

// Canonical trainable groups per stage; vision.base is never trainable.
std::set<std::string> stage_trainable_groups(mixer::StageId stage);

// Applies the stage's canonical selector to the model and returns it.
std::set<std::string> apply_freeze_schedule(model::ToyVlm& vlm, mixer::StageId stage);

// ---------------------------------------------------------------------------
// optimization
// ---------------------------------------------------------------------------

struct OptimConfig {
    double lr_lm = 1e-4;        // full LM tuning
    double lr_adapter = 3e-4;   // projector and LoRA adapters
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    int warmup_steps = 10;
};

// Decoupled-weight-decay adaptive-moment optimizer over trainable params.
class AdamW {
public:
    AdamW(model::ToyVlm& vlm, OptimConfig config);
    void step();
    int steps_done() const { return t_; }
    double last_lr_scale() const { return lr_scale_; }

private:
    model::ToyVlm& vlm_;
    OptimConfig config_;
    std::map<std::string, std::pair<MatrixXd, MatrixXd>> moments_;  // name -> (m, v)
    int t_ = 0;
    double lr_scale_ = 0.0;
};

// ---------------------------------------------------------------------------
// stage training
// ---------------------------------------------------------------------------

struct TrainState {
    size_t step = 0;
    std::vector<double> loss_history;
    uint64_t seed = 0;
    std::string stage;
};

struct TrainOptions {
    OptimConfig optim;
    std::filesystem::path metrics_log;     // appended JSONL, empty = off
    std::filesystem::path checkpoint_dir;  // stage-end checkpoint, empty = off
    std::filesystem::path data_root;       // base for relative image paths
    int snapshot_every = 50;               // last-good cadence for NaN aborts
};

struct TrainResult {
    TrainState state;
    double final_loss = 0.0;
    bool aborted = false;
};

// One pass of plan.steps optimizer steps over the stream (seeded shuffle per
// epoch, full forward/backward per sample, gradients averaged per token).
// Only trainable parameters change; a non-finite loss aborts the stage and
// re-writes the last good snapshot.
TrainResult train_stage(model::ToyVlm& vlm, const mixer::StagePlan& plan,
                        const std::vector<corpus::MultimodalSample>& data,
                        const TrainOptions& options);

// Builds the training template for one sample under a loss kind: the image
// (when present) and the text segments with their supervision flags.
struct PreparedSample {
    std::optional<util::Image> image;
    std::vector<model::TextSegment> segments;
};
PreparedSample prepare_sample(const model::ToyVlm& vlm, const corpus::MultimodalSample& sample,
                              mixer::LossKind kind);

// Encodes, projects and assembles a prepared sample (no caches).
model::AssembledSequence assemble_prepared(const model::ToyVlm& vlm,
                                           const PreparedSample& prep);

// Forward + loss (+ backward when requested); returns the mean-reduced loss.
double forward_backward(model::ToyVlm& vlm, const corpus::MultimodalSample& sample,
                        mixer::LossKind kind, bool backward,
                        size_t* supervised_tokens = nullptr);

// Central finite differences vs analytic gradients over every trainable
// parameter entry; returns the max relative error.
double grad_check(model::ToyVlm& vlm, mixer::LossKind kind,
                  const corpus::MultimodalSample& sample, double epsilon = 1e-4);

}  // namespace vlmkit::training
