#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "vlmkit/corpus.hpp"

namespace vlmkit::mixer {

enum class StageId { text_sft_1, text_sft_2, mm_align, mm_instruct };
enum class LossKind { causal_lm, alignment, instruction };

std::string to_string(StageId s);
std::string to_string(LossKind k);
StageId stage_from_string(std::string_view s);

// Domain:general record-count ratio of 1 : general_parts.
struct MixSpec {
    double general_parts = 0.0;
    uint64_t seed = 0;
    bool shuffle = false;
};

// Round-half-up general draw for a given domain count.
size_t general_draw(size_t domain_count, double general_parts);

// All domain records exactly once, plus a seeded uniform sample without
// replacement from the general pool. Deterministic given (inputs, spec).
corpus::Manifest mix_datasets(const corpus::Manifest& domain, const corpus::Manifest& general,
                              const MixSpec& spec);

struct StagePlan {
    StageId stage_id = StageId::text_sft_1;
    MixSpec mix;
    // Records drawn from the stage's domain source at the configured scale.
    size_t domain_count = 0;
    LossKind loss_kind = LossKind::causal_lm;
    std::vector<std::string> trainable;  // parameter groups
    size_t steps = 0;
    size_t batch_size = 8;

    size_t planned_general() const { return general_draw(domain_count, mix.general_parts); }
    size_t planned_total() const { return domain_count + planned_general(); }
};

struct StageConfig {
    double scale = 1.0 / 1000.0;  // shrinks the full-scale record counts
    uint64_t seed = 0;
    // Full-scale record counts; desk-scale counts are these times `scale`.
    size_t text_stage1_medical = 300000;
    size_t text_stage2_total = 250000;
    double text_stage2_medical_fraction = 0.2;  // 80% general / 20% medical
    size_t align_domain = 250000;
    size_t instruct_domain = 60000;
    double align_ratio = 1.0;     // 1:1
    double instruct_ratio = 0.5;  // 1:0.5
    bool grid_mode = false;       // restrict ratios to the experiment grid
    size_t steps_text = 0;        // optimizer budgets (0 = library default)
    size_t steps_align = 0;
    size_t steps_instruct = 0;
    size_t batch_size = 8;

    static StageConfig from_json(const nlohmann::json& j);
};

// The four-stage schedule: medical-only text SFT, 80/20 general/medical text
// SFT, multimodal alignment, multimodal instruction tuning.
std::vector<StagePlan> build_stage_plans(const StageConfig& config);

// Grid ratio sets: alignment {1:0, 1:1}, instruction {1:0, 1:0.2, 1:0.5, 1:1}.
const std::vector<double>& grid_align_ratios();
const std::vector<double>& grid_instruct_ratios();

}  // namespace vlmkit::mixer
