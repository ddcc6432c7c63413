#include "vlmkit/mixer.hpp"

#include <cmath>

#include "vlmkit/error.hpp"
#include "vlmkit/util/rng.hpp"

namespace vlmkit::mixer {

std::string to_string(StageId s) {
    switch (s) {
        case StageId::text_sft_1: return "text_sft_1";
        case StageId::text_sft_2: return "text_sft_2";
        case StageId::mm_align: return "mm_align";
        case StageId::mm_instruct: return "mm_instruct";
    }
    return "text_sft_1";
}

std::string to_string(LossKind k) {
    switch (k) {
        case LossKind::causal_lm: return "causal_lm";
        case LossKind::alignment: return "alignment";
        case LossKind::instruction: return "instruction";
    }
    return "causal_lm";
}

StageId stage_from_string(std::string_view s) {
    if (s == "text_sft_1") return StageId::text_sft_1;
    if (s == "text_sft_2") return StageId::text_sft_2;
    if (s == "mm_align") return StageId::mm_align;
    if (s == "mm_instruct") return StageId::mm_instruct;
    throw ConfigError("unknown stage: " + std::string(s));
}

size_t general_draw(size_t domain_count, double general_parts) {
    if (general_parts < 0) throw ConfigError("general_parts must be >= 0");
    return static_cast<size_t>(std::floor(static_cast<double>(domain_count) * general_parts + 0.5));
}

corpus::Manifest mix_datasets(const corpus::Manifest& domain, const corpus::Manifest& general,
                              const MixSpec& spec) {
    const size_t draw = general_draw(domain.records.size(), spec.general_parts);
    if (draw > general.records.size()) {
        throw DataError("insufficient general data: need " + std::to_string(draw) +
                        ", pool has " + std::to_string(general.records.size()));
    }

    corpus::Manifest out;
    out.name = domain.name + "+" + general.name;
    out.task = domain.task;
    out.base_dir = domain.base_dir;
    out.records = domain.records;

    util::Rng rng(util::derive_seed(spec.seed, "mix.draw"));
    for (const size_t idx : rng.sample_without_replacement(general.records.size(), draw)) {
        out.records.push_back(general.records[idx]);
    }
    if (spec.shuffle) {
        util::Rng shuffle_rng(util::derive_seed(spec.seed, "mix.shuffle"));
        shuffle_rng.shuffle(out.records);
    }
    return out;
}

namespace {

size_t scaled(size_t full_count, double scale) {
    return static_cast<size_t>(std::floor(static_cast<double>(full_count) * scale + 0.5));
}

void check_grid_ratio(double ratio, const std::vector<double>& allowed, const char* stage) {
    for (const double a : allowed) {
        if (ratio == a) return;
    }
    throw ConfigError(std::string("ratio outside grid for ") + stage + ": 1:" +
                      std::to_string(ratio));
}

}  // namespace

const std::vector<double>& grid_align_ratios() {
    static const std::vector<double> r = {0.0, 1.0};
    return r;
}

const std::vector<double>& grid_instruct_ratios() {
    static const std::vector<double> r = {0.0, 0.2, 0.5, 1.0};
    return r;
}

StageConfig StageConfig::from_json(const nlohmann::json& j) {
    StageConfig c;
    c.scale = j.value("scale", c.scale);
    c.seed = j.value("seed", c.seed);
    c.text_stage1_medical = j.value("text_stage1_medical", c.text_stage1_medical);
    c.text_stage2_total = j.value("text_stage2_total", c.text_stage2_total);
    c.text_stage2_medical_fraction =
        j.value("text_stage2_medical_fraction", c.text_stage2_medical_fraction);
    c.align_domain = j.value("align_domain", c.align_domain);
    c.instruct_domain = j.value("instruct_domain", c.instruct_domain);
    c.align_ratio = j.value("align_ratio", c.align_ratio);
    c.instruct_ratio = j.value("instruct_ratio", c.instruct_ratio);
    c.grid_mode = j.value("grid_mode", c.grid_mode);
    c.steps_text = j.value("steps_text", c.steps_text);
    c.steps_align = j.value("steps_align", c.steps_align);
    c.steps_instruct = j.value("steps_instruct", c.steps_instruct);
    c.batch_size = j.value("batch_size", c.batch_size);
    return c;
}

std::vector<StagePlan> build_stage_plans(const StageConfig& config) {
    if (config.scale <= 0) throw ConfigError("scale must be > 0");
    if (config.grid_mode) {
        check_grid_ratio(config.align_ratio, grid_align_ratios(), "mm_align");
        check_grid_ratio(config.instruct_ratio, grid_instruct_ratios(), "mm_instruct");
    }

    std::vector<StagePlan> plans;

    StagePlan s1;
    s1.stage_id = StageId::text_sft_1;
    s1.domain_count = scaled(config.text_stage1_medical, config.scale);
    s1.mix = {0.0, util::derive_seed(config.seed, "stage.text_sft_1"), true};
    s1.loss_kind = LossKind::causal_lm;
    s1.trainable = {"lm"};
    s1.steps = config.steps_text;
    s1.batch_size = config.batch_size;
    plans.push_back(s1);

    // 80% general / 20% medical: domain carries the medical 20%, the general
    // draw is 4x the domain count.
    StagePlan s2 = s1;
    s2.stage_id = StageId::text_sft_2;
    s2.domain_count = scaled(
        static_cast<size_t>(std::floor(static_cast<double>(config.text_stage2_total) *
                                           config.text_stage2_medical_fraction +
                                       0.5)),
        config.scale);
    const double general_fraction = 1.0 - config.text_stage2_medical_fraction;
    s2.mix = {general_fraction / config.text_stage2_medical_fraction,
              util::derive_seed(config.seed, "stage.text_sft_2"), true};
    plans.push_back(s2);

    StagePlan a;
    a.stage_id = StageId::mm_align;
    a.domain_count = scaled(config.align_domain, config.scale);
    a.mix = {config.align_ratio, util::derive_seed(config.seed, "stage.mm_align"), true};
    a.loss_kind = LossKind::alignment;
    a.trainable = {"projector"};
    a.steps = config.steps_align;
    a.batch_size = config.batch_size;
    plans.push_back(a);

    StagePlan i;
    i.stage_id = StageId::mm_instruct;
    i.domain_count = scaled(config.instruct_domain, config.scale);
    i.mix = {config.instruct_ratio, util::derive_seed(config.seed, "stage.mm_instruct"), true};
    i.loss_kind = LossKind::instruction;
    i.trainable = {"vision.lora", "projector", "lm"};
    i.steps = config.steps_instruct;
    i.batch_size = config.batch_size;
    plans.push_back(i);

    return plans;
}

}  // namespace vlmkit::mixer
