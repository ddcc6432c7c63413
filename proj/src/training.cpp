#include "vlmkit/training.hpp"

#include <cmath>
#include <fstream>

#include "vlmkit/error.hpp"
#include "vlmkit/util/rng.hpp"

namespace vlmkit::training {

using corpus::MultimodalSample;
using mixer::LossKind;
using mixer::StageId;
using model::ToyVlm;

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

namespace {

double row_logsumexp(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
    const double m = row.maxCoeff();
    return m + std::log((row.array() - m).exp().sum());
}

}  // namespace

double masked_nll(const MatrixXd& logits, std::span<const int> tokens,
                  std::span<const uint8_t> mask, Reduction reduction) {
    if (tokens.size() != mask.size() ||
        static_cast<size_t>(logits.rows()) != tokens.size()) {
        throw DataError("loss inputs disagree on sequence length");
    }
    double total = 0.0;
    size_t count = 0;
    for (size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) continue;
        if (i == 0) throw DataError("supervised position 0 has no prefix");
        const int target = tokens[i];
        if (target < 0 || target >= logits.cols()) {
            throw DataError("supervised target out of vocabulary");
        }
        const auto row = logits.row(static_cast<Eigen::Index>(i - 1));
        total += row_logsumexp(row) - row(target);
        ++count;
    }
    if (count == 0) throw DataError("degenerate sample: loss mask is empty");
    if (!std::isfinite(total)) throw NumericError("non-finite loss");
    return reduction == Reduction::mean ? total / static_cast<double>(count) : total;
}

MatrixXd masked_nll_backward(const MatrixXd& logits, std::span<const int> tokens,
                             std::span<const uint8_t> mask) {
    size_t count = 0;
    for (const uint8_t m : mask) count += m;
    if (count == 0) throw DataError("degenerate sample: loss mask is empty");

    MatrixXd dlogits = MatrixXd::Zero(logits.rows(), logits.cols());
    const double inv = 1.0 / static_cast<double>(count);
    for (size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) continue;
        const auto row = logits.row(static_cast<Eigen::Index>(i - 1));
        const double lse = row_logsumexp(row);
        dlogits.row(static_cast<Eigen::Index>(i - 1)) += inv * (row.array() - lse).exp().matrix();
        dlogits(static_cast<Eigen::Index>(i - 1), tokens[i]) -= inv;
    }
    return dlogits;
}

double alignment_loss(const MatrixXd& logits, std::span<const int> tokens,
                      std::span<const uint8_t> mask, Reduction reduction) {
    return masked_nll(logits, tokens, mask, reduction);
}

double instruction_loss(const MatrixXd& logits, std::span<const int> tokens,
                        std::span<const uint8_t> mask, Reduction reduction) {
    return masked_nll(logits, tokens, mask, reduction);
}

// ---------------------------------------------------------------------------
// freeze schedule
// ---------------------------------------------------------------------------

std::set<std::string> stage_trainable_groups(StageId stage) {
    switch (stage) {
        case StageId::text_sft_1:
        case StageId::text_sft_2:
            return {"lm"};
        case StageId::mm_align:
            return {"projector"};
        case StageId::mm_instruct:
            return {"vision.lora", "projector", "lm"};
    }
    throw ConfigError("unknown stage");
}

std::set<std::string> apply_freeze_schedule(ToyVlm& vlm, StageId stage) {
    const auto groups = stage_trainable_groups(stage);
    vlm.set_trainable(groups);
    return groups;
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

AdamW::AdamW(ToyVlm& vlm, OptimConfig config) : vlm_(vlm), config_(config) {
    for (const auto& ref : vlm_.param_refs()) {
        if (!ref.param->trainable) continue;
        moments_[ref.name] = {MatrixXd::Zero(ref.param->value.rows(), ref.param->value.cols()),
                              MatrixXd::Zero(ref.param->value.rows(), ref.param->value.cols())};
    }
}

void AdamW::step() {
    ++t_;
    lr_scale_ = config_.warmup_steps > 0
                    ? std::min(1.0, static_cast<double>(t_) / config_.warmup_steps)
                    : 1.0;
    const double bc1 = 1.0 - std::pow(config_.beta1, t_);
    const double bc2 = 1.0 - std::pow(config_.beta2, t_);
    for (const auto& ref : vlm_.param_refs()) {
        if (!ref.param->trainable) continue;
        auto it = moments_.find(ref.name);
        if (it == moments_.end()) {
            // parameter became trainable after construction
            it = moments_
                     .emplace(ref.name,
                              std::make_pair(
                                  MatrixXd::Zero(ref.param->value.rows(), ref.param->value.cols()),
                                  MatrixXd::Zero(ref.param->value.rows(), ref.param->value.cols())))
                     .first;
        }
        auto& [m, v] = it->second;
        const MatrixXd& g = ref.param->grad;
        m = config_.beta1 * m + (1.0 - config_.beta1) * g;
        v = config_.beta2 * v + (1.0 - config_.beta2) * g.array().square().matrix();
        const double lr = (ref.group == "lm" ? config_.lr_lm : config_.lr_adapter) * lr_scale_;
        const MatrixXd mhat = m / bc1;
        const MatrixXd vhat = v / bc2;
        ref.param->value.array() -=
            lr * (mhat.array() / (vhat.array().sqrt() + config_.eps) +
                  config_.weight_decay * ref.param->value.array());
    }
}

// ---------------------------------------------------------------------------
// sample preparation
// ---------------------------------------------------------------------------

namespace {

util::Image load_sample_image(const corpus::ImageRef& ref) {
    return util::load_image(ref.path);
}

}  // namespace

PreparedSample prepare_sample(const ToyVlm& vlm, const MultimodalSample& sample, LossKind kind) {
    PreparedSample prep;
    if (kind == LossKind::causal_lm) {
        const auto* text = std::get_if<corpus::TextRecord>(&sample);
        if (!text) {
            throw DataError("causal_lm stage expects text records, got '" +
                            std::string(corpus::sample_type(sample)) + "'");
        }
        prep.segments = vlm.text_segments(text->text);
        return prep;
    }
    if (kind == LossKind::alignment) {
        const auto* cap = std::get_if<corpus::ImageCaptionSample>(&sample);
        if (!cap) {
            throw DataError("alignment stage expects image-caption records, got '" +
                            std::string(corpus::sample_type(sample)) + "'");
        }
        prep.image = load_sample_image(cap->image);
        prep.segments = vlm.alignment_segments(cap->caption);
        return prep;
    }
    // instruction: VQA triples, conversations, and caption/text records as
    // single-turn samples with an empty question.
    std::vector<std::pair<std::string, std::string>> turns;
    if (const auto* vqa = std::get_if<corpus::VqaSample>(&sample)) {
        if (vqa->image) prep.image = load_sample_image(*vqa->image);
        turns.emplace_back(vqa->question, vqa->answer);
    } else if (const auto* conv = std::get_if<corpus::ConversationSample>(&sample)) {
        if (conv->image) prep.image = load_sample_image(*conv->image);
        for (const auto& t : conv->turns) turns.emplace_back(t.question, t.answer);
    } else if (const auto* cap = std::get_if<corpus::ImageCaptionSample>(&sample)) {
        prep.image = load_sample_image(cap->image);
        turns.emplace_back("", cap->caption);
    } else if (const auto* text = std::get_if<corpus::TextRecord>(&sample)) {
        turns.emplace_back("", text->text);
    }
    prep.segments = vlm.instruction_segments(turns);
    if (!prep.image) {
        prep.segments.insert(prep.segments.begin(),
                             {{model::Tokenizer::kBos}, false, "bos"});
    }
    return prep;
}

model::AssembledSequence assemble_prepared(const ToyVlm& vlm, const PreparedSample& prep) {
    std::optional<MatrixXd> projected;
    if (prep.image) projected = vlm.project(vlm.encode_image(*prep.image));
    return vlm.assemble(projected, prep.segments);
}

// ---------------------------------------------------------------------------
// forward / backward over one sample
// ---------------------------------------------------------------------------

double forward_backward(ToyVlm& vlm, const MultimodalSample& sample, LossKind kind,
                        bool backward, size_t* supervised_tokens) {
    const PreparedSample prep = prepare_sample(vlm, sample, kind);

    model::VisionCache vision_cache;
    model::LinearCache proj_cache;
    std::optional<MatrixXd> projected;
    if (prep.image) {
        projected = vlm.project(vlm.encode_image(*prep.image, &vision_cache), &proj_cache);
    }
    const model::AssembledSequence seq = vlm.assemble(projected, prep.segments);
    if (supervised_tokens) *supervised_tokens = seq.supervised_count();

    model::LmCache lm_cache;
    const MatrixXd logits = vlm.lm_forward(seq.inputs, &lm_cache);
    const double loss = masked_nll(logits, seq.tokens, seq.mask, Reduction::mean);
    if (!backward) return loss;

    const MatrixXd dlogits = masked_nll_backward(logits, seq.tokens, seq.mask);
    const MatrixXd dinputs = vlm.lm_backward(lm_cache, dlogits);

    if (vlm.tok_emb.trainable) {
        for (int i = 0; i < seq.length(); ++i) {
            const int id = seq.tokens[static_cast<size_t>(i)];
            if (id >= 0) vlm.tok_emb.grad.row(id) += dinputs.row(i);
        }
    }
    if (seq.n_visual > 0) {
        const bool vision_needed =
            vlm.group_trainable("vision.base") || vlm.group_trainable("vision.lora");
        if (vision_needed || vlm.group_trainable("projector")) {
            const MatrixXd dvisual = vlm.projector.backward(
                proj_cache, dinputs.topRows(seq.n_visual));
            if (vision_needed) vlm.vision_backward(vision_cache, dvisual);
        }
    }
    return loss;
}

// ---------------------------------------------------------------------------
// stage training
// ---------------------------------------------------------------------------

TrainResult train_stage(ToyVlm& vlm, const mixer::StagePlan& plan,
                        const std::vector<MultimodalSample>& data, const TrainOptions& options) {
    vlm.set_trainable({plan.trainable.begin(), plan.trainable.end()});
    if (plan.trainable.empty()) throw ConfigError("stage has no trainable parameter groups");
    if (data.empty() && plan.steps > 0) throw DataError("stage has an empty data stream");

    TrainResult result;
    result.state.seed = plan.mix.seed;
    result.state.stage = mixer::to_string(plan.stage_id);

    std::ofstream log;
    if (!options.metrics_log.empty()) {
        std::filesystem::create_directories(options.metrics_log.parent_path());
        log.open(options.metrics_log, std::ios::app);
        if (!log) throw IoError("cannot open metrics log: " + options.metrics_log.string());
    }

    AdamW optimizer(vlm, options.optim);
    util::Rng order_rng(util::derive_seed(plan.mix.seed, "train.order"));
    std::vector<size_t> order(data.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    order_rng.shuffle(order);
    size_t cursor = 0;

    ToyVlm snapshot = vlm;  // last-good state for NaN aborts
    const size_t batch = std::max<size_t>(1, plan.batch_size);

    for (size_t step = 0; step < plan.steps; ++step) {
        vlm.zero_grads();
        double loss_sum = 0.0;
        size_t tokens = 0;
        bool failed = false;
        try {
            for (size_t b = 0; b < batch; ++b) {
                if (cursor == order.size()) {
                    order_rng.shuffle(order);
                    cursor = 0;
                }
                const auto& sample = data[order[cursor++]];
                size_t sup = 0;
                loss_sum += forward_backward(vlm, sample, plan.loss_kind, /*backward=*/true, &sup);
                tokens += sup;
            }
        } catch (const NumericError&) {
            failed = true;
        }
        const double step_loss = loss_sum / static_cast<double>(batch);
        if (failed || !std::isfinite(step_loss)) {
            vlm = snapshot;
            if (!options.checkpoint_dir.empty()) vlm.save(options.checkpoint_dir);
            result.aborted = true;
            result.final_loss = step_loss;
            return result;
        }

        for (const auto& ref : vlm.param_refs()) {
            if (ref.param->trainable) ref.param->grad /= static_cast<double>(batch);
        }
        optimizer.step();

        result.state.step = step + 1;
        result.state.loss_history.push_back(step_loss);
        result.final_loss = step_loss;
        if (log.is_open()) {
            nlohmann::json line{{"step", step + 1},
                                {"stage", result.state.stage},
                                {"loss", step_loss},
                                {"lr", optimizer.last_lr_scale()},
                                {"tokens", tokens}};
            log << line.dump() << "\n";
        }
        if (options.snapshot_every > 0 &&
            (step + 1) % static_cast<size_t>(options.snapshot_every) == 0) {
            snapshot = vlm;
        }
    }

    if (!options.checkpoint_dir.empty()) vlm.save(options.checkpoint_dir);
    return result;
}

// ---------------------------------------------------------------------------
// gradient checking
// ---------------------------------------------------------------------------

double grad_check(ToyVlm& vlm, LossKind kind, const MultimodalSample& sample, double epsilon) {
    vlm.zero_grads();
    forward_backward(vlm, sample, kind, /*backward=*/true);

    std::map<std::string, MatrixXd> analytic;
    for (const auto& ref : vlm.param_refs()) {
        if (ref.param->trainable) analytic[ref.name] = ref.param->grad;
    }

    double max_err = 0.0;
    for (const auto& ref : vlm.param_refs()) {
        if (!ref.param->trainable) continue;
        MatrixXd& value = ref.param->value;
        const MatrixXd& a = analytic[ref.name];
        for (Eigen::Index r = 0; r < value.rows(); ++r) {
            for (Eigen::Index c = 0; c < value.cols(); ++c) {
                const double orig = value(r, c);
                value(r, c) = orig + epsilon;
                const double plus = forward_backward(vlm, sample, kind, false);
                value(r, c) = orig - epsilon;
                const double minus = forward_backward(vlm, sample, kind, false);
                value(r, c) = orig;
                const double numeric = (plus - minus) / (2.0 * epsilon);
                const double diff = std::abs(a(r, c) - numeric);
                // entries below the tolerance scale are compared absolutely;
                // the FD truncation noise (~eps^2) dominates tiny gradients
                const double denom = std::max({std::abs(a(r, c)), std::abs(numeric), 1e-4});
                const double err = diff / denom;
                if (err > max_err) max_err = err;
            }
        }
    }
    return max_err;
}

}  // namespace vlmkit::training
