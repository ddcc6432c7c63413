#include "vlmkit/curation.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "vlmkit/error.hpp"
#include "vlmkit/util/digest.hpp"
#include "vlmkit/util/text.hpp"

namespace vlmkit::curation {

using corpus::MultimodalSample;
using nlohmann::json;

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

json FilterReport::to_json() const {
    json entries = json::array();
    for (const auto& e : filters) {
        json j{{"name", e.name},
               {"input_count", e.input_count},
               {"accepted_count", e.accepted_count},
               {"rejected_count", e.rejected_count},
               {"sample_rejected_ids", e.sample_rejected_ids}};
        if (e.quarantined_count > 0 || e.name == "perplexity") {
            j["quarantined_count"] = e.quarantined_count;
            j["quarantined_ids"] = e.quarantined_ids;
        }
        entries.push_back(std::move(j));
    }
    return json{{"pipeline", pipeline}, {"filters", entries}};
}

void FilterReport::save(const std::filesystem::path& path) const {
    if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write report: " + path.string());
    f << to_json().dump(2) << "\n";
}

bool FilterReport::conserves() const {
    for (size_t i = 0; i < filters.size(); ++i) {
        const auto& e = filters[i];
        if (e.accepted_count + e.rejected_count + e.quarantined_count != e.input_count) {
            return false;
        }
        if (i > 0 && e.input_count != filters[i - 1].accepted_count) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// normalize
// ---------------------------------------------------------------------------

std::string normalize_text(std::string_view text) {
    const auto cps = util::utf8_codepoints(text);
    std::vector<uint32_t> out;
    out.reserve(cps.size());
    bool pending_space = false;
    for (uint32_t cp : cps) {
        if (util::is_space_cp(cp)) {
            if (!out.empty()) pending_space = true;
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        if (cp >= 'A' && cp <= 'Z') cp += 'a' - 'A';
        out.push_back(cp);
    }
    return util::utf8_encode(out);
}

bool contains_math(std::string_view text) {
    const std::string s(text);
    if (s.find('=') != std::string::npos) return true;
    for (const char* pat : {"\\frac", "\\sum", "\\int", "^{", "_{"}) {
        if (s.find(pat) != std::string::npos) return true;
    }
    auto is_op = [](char c) { return c == '+' || c == '-' || c == '*' || c == '/'; };
    for (size_t i = 0; i + 1 < s.size(); ++i) {
        if (is_op(s[i]) && is_op(s[i + 1])) return true;
    }
    return false;
}

// ---------------------------------------------------------------------------
// embedder / scorers
// ---------------------------------------------------------------------------

Eigen::VectorXd TrigramHashEmbedder::embed(const std::string& text) const {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(dim_);
    const auto cps = util::utf8_codepoints(normalize_text(text));
    if (cps.size() >= 3) {
        for (size_t i = 0; i + 2 < cps.size(); ++i) {
            uint64_t h = 1469598103934665603ULL;
            for (size_t k = 0; k < 3; ++k) {
                const uint32_t cp = cps[i + k];
                for (int b = 0; b < 4; ++b) {
                    h ^= (cp >> (8 * b)) & 0xff;
                    h *= 1099511628211ULL;
                }
            }
            v[static_cast<int>(h % static_cast<uint64_t>(dim_))] += 1.0;
        }
    } else if (!cps.empty()) {
        // Very short text: hash what is there so the vector is non-zero.
        uint64_t h = 1469598103934665603ULL;
        for (const uint32_t cp : cps) h = (h ^ cp) * 1099511628211ULL;
        v[static_cast<int>(h % static_cast<uint64_t>(dim_))] += 1.0;
    }
    const double n = v.norm();
    if (n > 0) v /= n;
    return v;
}

namespace {

// Scorer units: ASCII alphanumeric runs as words, every other non-space code
// point (CJK in particular) as a single-character token.
std::vector<std::string> scorer_tokens(const std::string& text) {
    std::vector<std::string> tokens;
    std::string word;
    for (const uint32_t cp : util::utf8_codepoints(normalize_text(text))) {
        const bool wordish = cp < 0x80 && (std::isalnum(static_cast<int>(cp)) != 0);
        if (wordish) {
            word.push_back(static_cast<char>(cp));
            continue;
        }
        if (!word.empty()) {
            tokens.push_back(word);
            word.clear();
        }
        if (util::is_space_cp(cp) || cp < 0x80) continue;  // separators and ASCII punct
        std::string single;
        util::utf8_append(single, cp);
        tokens.push_back(std::move(single));
    }
    if (!word.empty()) tokens.push_back(word);
    return tokens;
}

}  // namespace

UnigramScorer UnigramScorer::fit(const std::vector<std::string>& texts) {
    UnigramScorer s;
    for (const auto& t : texts) {
        for (auto& tok : scorer_tokens(t)) {
            s.counts_[tok]++;
            s.total_++;
        }
    }
    return s;
}

double UnigramScorer::perplexity(const std::string& text) const {
    double log_sum = 0.0;
    size_t n = 0;
    const double denom = static_cast<double>(total_ + counts_.size() + 1);
    for (const auto& tok : scorer_tokens(text)) {
        const auto it = counts_.find(tok);
        const double c = it == counts_.end() ? 0.0 : static_cast<double>(it->second);
        log_sum += std::log((c + 1.0) / denom);
        ++n;
    }
    if (n == 0) return 1.0;
    return std::exp(-log_sum / static_cast<double>(n));
}

// ---------------------------------------------------------------------------
// filters
// ---------------------------------------------------------------------------

FilterResult exact_dedup(const Records& records) {
    FilterResult r;
    r.entry.name = "exact_dedup";
    r.entry.input_count = records.size();
    std::unordered_set<std::string> seen;
    for (const auto& rec : records) {
        // multimodal records are duplicates only when text AND image agree
        std::string key = normalize_text(corpus::primary_text(rec));
        if (const auto* img = corpus::sample_image(rec)) {
            key += '\x1f';
            key += img->path;
        }
        const std::string digest = util::md5_hex(key);
        if (seen.insert(digest).second) {
            r.kept.push_back(rec);
            ++r.entry.accepted_count;
        } else {
            r.entry.note_rejected(corpus::sample_id(rec));
        }
    }
    return r;
}

FilterResult near_dedup(const Records& records, const Embedder& embedder, double threshold) {
    if (threshold <= 0) throw ConfigError("near_dedup threshold must be > 0");
    FilterResult r;
    r.entry.name = "near_dedup";
    r.entry.input_count = records.size();
    std::vector<Eigen::VectorXd> kept_embeddings;
    for (const auto& rec : records) {
        const Eigen::VectorXd e = embedder.embed(corpus::primary_text(rec));
        if (e.size() != embedder.dim()) {
            throw ConfigError("embedder dimension mismatch: declared " +
                              std::to_string(embedder.dim()) + ", produced " +
                              std::to_string(e.size()));
        }
        bool duplicate = false;
        for (const auto& k : kept_embeddings) {
            if ((e - k).norm() < threshold) {
                duplicate = true;
                break;
            }
        }
        if (duplicate) {
            r.entry.note_rejected(corpus::sample_id(rec));
        } else {
            kept_embeddings.push_back(e);
            r.kept.push_back(rec);
            ++r.entry.accepted_count;
        }
    }
    return r;
}

FilterResult length_math_filter(const Records& records, size_t min_chars) {
    FilterResult r;
    r.entry.name = "length_math";
    r.entry.input_count = records.size();
    for (const auto& rec : records) {
        bool keep = true;
        if (const auto* cap = std::get_if<corpus::ImageCaptionSample>(&rec)) {
            keep = util::utf8_length(cap->caption) >= min_chars && !contains_math(cap->caption);
        }
        if (keep) {
            r.kept.push_back(rec);
            ++r.entry.accepted_count;
        } else {
            r.entry.note_rejected(corpus::sample_id(rec));
        }
    }
    return r;
}

PiiPatterns PiiPatterns::default_set() {
    // Phone shapes (CN mobile, dashed/volume formats), emails, CN national id.
    return from_config(
        {
            R"((^|[^0-9])1[3-9][0-9]{9}([^0-9]|$))",
            R"([0-9]{3}[-. ][0-9]{3,4}[-. ][0-9]{4})",
            R"([A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,})",
            R"((^|[^0-9])[0-9]{17}[0-9Xx]([^0-9]|$))",
        },
        {});
}

PiiPatterns PiiPatterns::from_config(const std::vector<std::string>& sources,
                                     const std::vector<std::string>& names) {
    PiiPatterns p;
    p.pattern_sources = sources;
    p.name_list = names;
    for (const auto& s : sources) {
        try {
            p.patterns.emplace_back(s, std::regex::ECMAScript);
        } catch (const std::regex_error& e) {
            throw ConfigError("invalid PII pattern '" + s + "': " + e.what());
        }
    }
    return p;
}

bool PiiPatterns::matches(const std::string& raw_text) const {
    for (const auto& re : patterns) {
        if (std::regex_search(raw_text, re)) return true;
    }
    for (const auto& name : name_list) {
        if (!name.empty() && raw_text.find(name) != std::string::npos) return true;
    }
    return false;
}

FilterResult pii_filter(const Records& records, const PiiPatterns& patterns) {
    if (patterns.patterns.empty() && patterns.name_list.empty()) {
        throw ConfigError("pii_filter requires a non-empty pattern set");
    }
    FilterResult r;
    r.entry.name = "pii";
    r.entry.input_count = records.size();
    for (const auto& rec : records) {
        if (patterns.matches(corpus::primary_text(rec))) {
            r.entry.note_rejected(corpus::sample_id(rec));
        } else {
            r.kept.push_back(rec);
            ++r.entry.accepted_count;
        }
    }
    return r;
}

FilterResult perplexity_filter(const Records& records, const PerplexityScorer& scorer,
                               double tau) {
    if (tau <= 0) throw ConfigError("perplexity tau must be > 0");
    FilterResult r;
    r.entry.name = "perplexity";
    r.entry.input_count = records.size();
    for (const auto& rec : records) {
        double ppl;
        try {
            ppl = scorer.perplexity(corpus::primary_text(rec));
        } catch (const std::exception&) {
            ++r.entry.quarantined_count;
            r.entry.quarantined_ids.push_back(corpus::sample_id(rec));
            continue;
        }
        if (ppl <= tau) {
            r.kept.push_back(rec);
            ++r.entry.accepted_count;
        } else {
            r.entry.note_rejected(corpus::sample_id(rec));
        }
    }
    return r;
}

FilterResult charset_filter(const Records& records) {
    auto allowed = [](uint32_t cp) {
        if (cp < 0x80) return true;                      // ASCII
        if (cp >= 0x4e00 && cp <= 0x9fff) return true;   // CJK unified
        if (cp >= 0x3000 && cp <= 0x303f) return true;   // CJK punctuation
        if (cp >= 0xff00 && cp <= 0xffef) return true;   // full-width forms
        return false;
    };
    FilterResult r;
    r.entry.name = "charset";
    r.entry.input_count = records.size();
    for (const auto& rec : records) {
        const auto cps = util::utf8_codepoints(corpus::primary_text(rec));
        bool keep = true;
        for (const uint32_t cp : cps) {
            if (!allowed(cp)) {
                keep = false;
                break;
            }
        }
        if (keep) {
            r.kept.push_back(rec);
            ++r.entry.accepted_count;
        } else {
            r.entry.note_rejected(corpus::sample_id(rec));
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// pipeline
// ---------------------------------------------------------------------------

PipelineConfig PipelineConfig::from_json(const json& j) {
    PipelineConfig cfg;
    for (const auto& f : j.at("filters")) {
        FilterConfig fc;
        fc.name = f.at("name").get<std::string>();
        if (f.contains("params")) fc.params = f.at("params");
        cfg.filters.push_back(std::move(fc));
    }
    cfg.validate();
    return cfg;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open curation config: " + path.string());
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw ConfigError("malformed curation config: " + std::string(e.what()));
    }
    return from_json(j);
}

PipelineConfig PipelineConfig::default_pipeline() {
    PipelineConfig cfg;
    cfg.filters = {
        {"exact_dedup", json::object()},
        {"near_dedup", {{"threshold", 0.35}}},
        {"length_math", {{"min_chars", 250}}},
        {"pii", json::object()},
        {"perplexity", {{"tau", 1000.0}, {"scorer", "unigram"}}},
    };
    return cfg;
}

void PipelineConfig::validate() const {
    static const std::set<std::string> known = {"exact_dedup", "near_dedup", "length_math",
                                                "pii",         "perplexity", "charset"};
    long exact_pos = -1, near_pos = -1;
    for (size_t i = 0; i < filters.size(); ++i) {
        const auto& f = filters[i];
        if (known.find(f.name) == known.end()) {
            throw ConfigError("unknown filter: " + f.name);
        }
        if (f.name == "exact_dedup") exact_pos = static_cast<long>(i);
        if (f.name == "near_dedup") near_pos = static_cast<long>(i);
    }
    if (near_pos >= 0 && (exact_pos < 0 || exact_pos > near_pos)) {
        throw ConfigError("pipeline misordered: exact_dedup must run before near_dedup");
    }
}

std::pair<corpus::Manifest, FilterReport> run_pipeline(const PipelineConfig& config,
                                                       const corpus::Manifest& input) {
    config.validate();

    corpus::Manifest out = input;
    FilterReport report;

    for (const auto& f : config.filters) {
        FilterResult res;
        if (f.name == "exact_dedup") {
            res = exact_dedup(out.records);
        } else if (f.name == "near_dedup") {
            const double threshold = f.params.value("threshold", 0.35);
            const int dim = f.params.value("dim", 256);
            TrigramHashEmbedder embedder(dim);
            res = near_dedup(out.records, embedder, threshold);
        } else if (f.name == "length_math") {
            res = length_math_filter(out.records, f.params.value("min_chars", size_t{250}));
        } else if (f.name == "pii") {
            PiiPatterns patterns =
                f.params.contains("patterns")
                    ? PiiPatterns::from_config(
                          f.params.at("patterns").get<std::vector<std::string>>(),
                          f.params.value("names", std::vector<std::string>{}))
                    : PiiPatterns::default_set();
            if (f.params.contains("names") && !f.params.contains("patterns")) {
                patterns.name_list = f.params.at("names").get<std::vector<std::string>>();
            }
            res = pii_filter(out.records, patterns);
        } else if (f.name == "perplexity") {
            const double tau = f.params.value("tau", 1000.0);
            const std::string kind = f.params.value("scorer", "unigram");
            if (kind == "uniform") {
                UniformScorer scorer(f.params.value("vocab", size_t{1000}));
                res = perplexity_filter(out.records, scorer, tau);
            } else if (kind == "unigram") {
                // Fit on the records reaching this filter; deterministic.
                std::vector<std::string> texts;
                texts.reserve(out.records.size());
                for (const auto& r : out.records) texts.push_back(corpus::primary_text(r));
                const UnigramScorer scorer = UnigramScorer::fit(texts);
                res = perplexity_filter(out.records, scorer, tau);
            } else {
                throw ConfigError("unknown perplexity scorer: " + kind);
            }
        } else if (f.name == "charset") {
            res = charset_filter(out.records);
        }
        out.records = std::move(res.kept);
        report.pipeline.push_back(f.name);
        report.filters.push_back(std::move(res.entry));
    }
    return {std::move(out), std::move(report)};
}

}  // namespace vlmkit::curation
