#pragma once

#include <memory>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "vlmkit/corpus.hpp"

namespace vlmkit::curation {

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct FilterEntry {
    static constexpr size_t kMaxSampleIds = 20;

    std::string name;
    size_t input_count = 0;
    size_t accepted_count = 0;
    size_t rejected_count = 0;
    size_t quarantined_count = 0;
    std::vector<std::string> sample_rejected_ids;  // capped at kMaxSampleIds
    std::vector<std::string> quarantined_ids;

    void note_rejected(const std::string& id) {
        ++rejected_count;
        if (sample_rejected_ids.size() < kMaxSampleIds) sample_rejected_ids.push_back(id);
    }
};

struct FilterReport {
    std::vector<std::string> pipeline;  // filter names in execution order
    std::vector<FilterEntry> filters;

    nlohmann::json to_json() const;
    void save(const std::filesystem::path& path) const;
    // accepted + rejected (+ quarantined) == input for every entry, and each
    // entry's input equals the previous entry's accepted count.
    bool conserves() const;
};

// ---------------------------------------------------------------------------
// pluggable scoring interfaces
// ---------------------------------------------------------------------------

class Embedder {
public:
    virtual ~Embedder() = default;
    virtual Eigen::VectorXd embed(const std::string& text) const = 0;
    virtual int dim() const = 0;
};

// Default embedder: feature-hashed code-point 3-gram counts, L2-normalized.
// Deterministic and dependency-free; same interface a learned model would use.
class TrigramHashEmbedder : public Embedder {
public:
    explicit TrigramHashEmbedder(int dim = 256) : dim_(dim) {}
    Eigen::VectorXd embed(const std::string& text) const override;
    int dim() const override { return dim_; }

private:
    int dim_;
};

class PerplexityScorer {
public:
    virtual ~PerplexityScorer() = default;
    virtual double perplexity(const std::string& text) const = 0;
};

// perplexity(text) == vocab_size for every text, the uniform-model identity.
class UniformScorer : public PerplexityScorer {
public:
    explicit UniformScorer(size_t vocab_size) : vocab_(vocab_size) {}
    double perplexity(const std::string&) const override {
        return static_cast<double>(vocab_);
    }

private:
    size_t vocab_;
};

// Add-one smoothed unigram model over whitespace tokens of normalized text.
class UnigramScorer : public PerplexityScorer {
public:
    static UnigramScorer fit(const std::vector<std::string>& texts);
    double perplexity(const std::string& text) const override;

private:
    std::map<std::string, size_t> counts_;
    size_t total_ = 0;
};

// ---------------------------------------------------------------------------
// operations
// ---------------------------------------------------------------------------

// Case-fold (ASCII), collapse whitespace runs to single spaces, trim.
// Idempotent and total.
std::string normalize_text(std::string_view text);

// True when the text looks like it contains mathematical notation.
bool contains_math(std::string_view text);

using Records = std::vector<corpus::MultimodalSample>;

struct FilterResult {
    Records kept;
    FilterEntry entry;
};

// Keep the first occurrence (input order) of each normalized-text MD5 digest.
FilterResult exact_dedup(const Records& records);

// Greedy scan: drop a record iff its embedding lies within `threshold`
// (Euclidean) of any previously kept record's embedding.
FilterResult near_dedup(const Records& records, const Embedder& embedder, double threshold);

// Caption samples must have >= min_chars characters and no math notation;
// non-caption records pass through.
FilterResult length_math_filter(const Records& records, size_t min_chars = 250);

struct PiiPatterns {
    std::vector<std::string> pattern_sources;
    std::vector<std::regex> patterns;
    std::vector<std::string> name_list;

    static PiiPatterns default_set();
    static PiiPatterns from_config(const std::vector<std::string>& sources,
                                   const std::vector<std::string>& names);
    bool matches(const std::string& raw_text) const;
};

FilterResult pii_filter(const Records& records, const PiiPatterns& patterns);

// Keep records with perplexity <= tau. A scorer failure routes the record to
// the quarantine list instead of dropping it.
FilterResult perplexity_filter(const Records& records, const PerplexityScorer& scorer,
                               double tau);

// Optional special/non-Chinese character filter (disabled by default):
// rejects records containing code points outside CJK + ASCII + punctuation.
FilterResult charset_filter(const Records& records);

// ---------------------------------------------------------------------------
// pipeline
// ---------------------------------------------------------------------------

struct FilterConfig {
    std::string name;  // exact_dedup | near_dedup | length_math | pii | perplexity | charset
    nlohmann::json params = nlohmann::json::object();
};

struct PipelineConfig {
    std::vector<FilterConfig> filters;

    static PipelineConfig from_json(const nlohmann::json& j);
    static PipelineConfig load(const std::filesystem::path& path);
    static PipelineConfig default_pipeline();
    // Throws ConfigError on misordered dedup filters or bad parameters.
    void validate() const;
};

std::pair<corpus::Manifest, FilterReport> run_pipeline(const PipelineConfig& config,
                                                       const corpus::Manifest& input);

}  // namespace vlmkit::curation
