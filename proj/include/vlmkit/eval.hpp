#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "vlmkit/corpus.hpp"
#include "vlmkit/model.hpp"
#include "vlmkit/util/image.hpp"

namespace vlmkit::eval {

// Shared metric tokenization: case-fold, punctuation to spaces, whitespace
// split. Applied to candidates and references alike.
std::vector<std::string> tokenize(std::string_view text);

// Canonical answer form used for exact-match accuracy.
std::string normalize_answer(std::string_view text);

// Clipped unigram precision times brevity penalty; empty candidate scores 0.
double bleu1(const std::string& candidate, const std::string& reference);

struct Prf {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// Multiset token overlap between candidate and reference.
Prf token_prf(const std::string& candidate, const std::string& reference);

// Argmax of bleu1(output, descriptor); ties break to the lowest index.
size_t classify_by_bleu(const std::string& output, const std::vector<std::string>& descriptors);

// Per-class one-vs-rest AUC via the rank statistic (midranks for ties),
// averaged over classes present in gold. Throws when gold has one class.
double macro_auc(const Eigen::MatrixXd& scores, const std::vector<int>& gold);

// The only capability evaluation requires of a model.
class ModelUnderTest {
public:
    virtual ~ModelUnderTest() = default;
    virtual std::string generate(const std::optional<util::Image>& image,
                                 const std::string& prompt) = 0;
};

// Adapts a ToyVlm checkpoint with greedy decoding.
class VlmUnderTest : public ModelUnderTest {
public:
    explicit VlmUnderTest(const model::ToyVlm& vlm, model::DecodeConfig decode = {})
        : vlm_(vlm), decode_(decode) {}
    std::string generate(const std::optional<util::Image>& image,
                         const std::string& prompt) override {
        return vlm_.generate(image, prompt, decode_).text;
    }

private:
    const model::ToyVlm& vlm_;
    model::DecodeConfig decode_;
};

struct MetricReport {
    std::string dataset;
    std::string task;
    std::map<std::string, double> metrics;
    size_t sample_count = 0;
    nlohmann::json detail = nlohmann::json::array();  // per-sample rows
    std::vector<std::string> notes;

    nlohmann::json to_json() const;
    void save(const std::filesystem::path& path) const;
    // Recompute headline numbers from the detail table; true when they match.
    bool consistent() const;
};

enum class QaProtocol { multiple_choice, yes_no_maybe };

// Prompt formats live here so every caller evaluates identically.
std::string vqa_prompt(const corpus::VqaSample& s);
std::string qa_prompt(const corpus::VqaSample& s, QaProtocol protocol);
std::string ic_prompt(const std::vector<std::string>& classes);

// Extraction for multiple-choice answers: standalone letter, "answer is X",
// then best token overlap with an option.
std::optional<size_t> extract_choice(const std::string& output,
                                     const std::vector<std::string>& options);
std::string extract_yes_no_maybe(const std::string& output);

MetricReport evaluate_vqa(ModelUnderTest& m, const corpus::Manifest& dataset, int workers = 1);
MetricReport evaluate_qa(ModelUnderTest& m, const corpus::Manifest& dataset, QaProtocol protocol,
                         int workers = 1);
MetricReport evaluate_ic(ModelUnderTest& m, const corpus::Manifest& dataset, int workers = 1);

}  // namespace vlmkit::eval
