#include "vlmkit/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <regex>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "vlmkit/error.hpp"

namespace vlmkit::eval {

using corpus::Manifest;
using corpus::VqaSample;
using Eigen::MatrixXd;
using nlohmann::json;

// ---------------------------------------------------------------------------
// tokenization and string metrics
// ---------------------------------------------------------------------------

std::vector<std::string> tokenize(std::string_view text) {
    std::string cleaned;
    cleaned.reserve(text.size());
    for (const char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (c < 0x80 && std::ispunct(c)) {
            cleaned.push_back(' ');
        } else if (c < 0x80 && std::isupper(c)) {
            cleaned.push_back(static_cast<char>(std::tolower(c)));
        } else {
            cleaned.push_back(ch);
        }
    }
    std::vector<std::string> tokens;
    std::istringstream in(cleaned);
    std::string tok;
    while (in >> tok) tokens.push_back(tok);
    return tokens;
}

std::string normalize_answer(std::string_view text) {
    const auto toks = tokenize(text);
    std::string out;
    for (size_t i = 0; i < toks.size(); ++i) {
        if (i) out += ' ';
        out += toks[i];
    }
    return out;
}

namespace {

std::unordered_map<std::string, size_t> count_tokens(const std::vector<std::string>& toks) {
    std::unordered_map<std::string, size_t> counts;
    for (const auto& t : toks) counts[t]++;
    return counts;
}

size_t clipped_overlap(const std::vector<std::string>& cand,
                       const std::vector<std::string>& ref) {
    const auto cand_counts = count_tokens(cand);
    const auto ref_counts = count_tokens(ref);
    size_t overlap = 0;
    for (const auto& [tok, n] : cand_counts) {
        const auto it = ref_counts.find(tok);
        if (it != ref_counts.end()) overlap += std::min(n, it->second);
    }
    return overlap;
}

}  // namespace

double bleu1(const std::string& candidate, const std::string& reference) {
    const auto cand = tokenize(candidate);
    if (cand.empty()) return 0.0;
    const auto ref = tokenize(reference);
    const double precision =
        static_cast<double>(clipped_overlap(cand, ref)) / static_cast<double>(cand.size());
    const double c = static_cast<double>(cand.size());
    const double r = static_cast<double>(ref.size());
    const double bp = c >= r ? 1.0 : std::exp(1.0 - r / c);
    return precision * bp;
}

Prf token_prf(const std::string& candidate, const std::string& reference) {
    const auto cand = tokenize(candidate);
    const auto ref = tokenize(reference);
    const double overlap = static_cast<double>(clipped_overlap(cand, ref));
    Prf out;
    out.precision = cand.empty() ? 0.0 : overlap / static_cast<double>(cand.size());
    out.recall = ref.empty() ? 0.0 : overlap / static_cast<double>(ref.size());
    out.f1 = (out.precision + out.recall) > 0
                 ? 2.0 * out.precision * out.recall / (out.precision + out.recall)
                 : 0.0;
    return out;
}

size_t classify_by_bleu(const std::string& output, const std::vector<std::string>& descriptors) {
    if (descriptors.empty()) throw ConfigError("classify_by_bleu needs at least one descriptor");
    size_t best = 0;
    double best_score = bleu1(output, descriptors[0]);
    for (size_t i = 1; i < descriptors.size(); ++i) {
        const double s = bleu1(output, descriptors[i]);
        if (s > best_score) {
            best_score = s;
            best = i;
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// macro AUC
// ---------------------------------------------------------------------------

namespace {

// 1-based midranks: tied scores share the average of their rank span.
std::vector<double> midranks(const std::vector<double>& scores) {
    const size_t n = scores.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&scores](size_t a, size_t b) { return scores[a] < scores[b]; });
    std::vector<double> ranks(n, 0.0);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double macro_auc(const MatrixXd& scores, const std::vector<int>& gold) {
    if (scores.cols() < 2) throw DataError("macro AUC needs at least two classes");
    if (static_cast<size_t>(scores.rows()) != gold.size()) {
        throw DataError("macro AUC: score rows must match gold labels");
    }
    if (!scores.allFinite()) throw DataError("macro AUC: non-finite scores");
    const size_t n = gold.size();
    bool multi_class = false;
    for (size_t i = 1; i < n; ++i) multi_class = multi_class || gold[i] != gold[0];
    if (!multi_class) throw DataError("macro AUC undefined: gold contains a single class");

    double total = 0.0;
    size_t used = 0;
    for (int k = 0; k < scores.cols(); ++k) {
        size_t n_pos = 0;
        for (const int g : gold) n_pos += g == k ? 1 : 0;
        const size_t n_neg = n - n_pos;
        if (n_pos == 0 || n_neg == 0) continue;  // class absent from gold

        std::vector<double> col(n);
        for (size_t i = 0; i < n; ++i) col[i] = scores(static_cast<Eigen::Index>(i), k);
        const auto ranks = midranks(col);
        double rank_sum = 0.0;
        for (size_t i = 0; i < n; ++i) {
            if (gold[i] == k) rank_sum += ranks[i];
        }
        const double auc =
            (rank_sum - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0) /
            (static_cast<double>(n_pos) * static_cast<double>(n_neg));
        total += auc;
        ++used;
    }
    if (used == 0) throw DataError("macro AUC undefined: no class has both outcomes");
    return total / static_cast<double>(used);
}

// ---------------------------------------------------------------------------
// report plumbing
// ---------------------------------------------------------------------------

json MetricReport::to_json() const {
    json m = json::object();
    for (const auto& [k, v] : metrics) m[k] = v;
    return json{{"dataset", dataset}, {"task", task},       {"sample_count", sample_count},
                {"metrics", m},       {"notes", notes},     {"detail", detail}};
}

void MetricReport::save(const std::filesystem::path& path) const {
    if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write report: " + path.string());
    f << to_json().dump(2) << "\n";
}

namespace {

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

bool near(double a, double b) { return std::abs(a - b) <= 1e-12; }

}  // namespace

bool MetricReport::consistent() const {
    std::map<std::string, std::vector<double>> cols;
    for (const auto& row : detail) {
        for (const auto& [k, v] : row.items()) {
            if (v.is_number()) cols[k].push_back(v.get<double>());
        }
    }
    if (task == "vqa") {
        std::vector<double> open_em, closed_em, open_recall;
        for (const auto& row : detail) {
            const bool open = row.at("question_kind") == "open";
            (open ? open_em : closed_em).push_back(row.at("exact_match").get<double>());
            if (open) open_recall.push_back(row.at("recall").get<double>());
        }
        auto check = [this](const char* key, double v) {
            const auto it = metrics.find(key);
            return it == metrics.end() || near(it->second, v);
        };
        return check("O-A", mean_of(open_em)) && check("C-A", mean_of(closed_em)) &&
               check("O-R", mean_of(open_recall)) && check("recall", mean_of(cols["recall"])) &&
               check("f1", mean_of(cols["f1"])) && check("bleu1", mean_of(cols["bleu1"]));
    }
    if (task == "qa") {
        return near(metrics.at("accuracy"), mean_of(cols["correct"]));
    }
    if (task == "ic") {
        return near(metrics.at("accuracy"), mean_of(cols["correct"]));
    }
    return true;
}

// ---------------------------------------------------------------------------
// prompts and extraction
// ---------------------------------------------------------------------------

std::string vqa_prompt(const VqaSample& s) { return s.question; }

std::string qa_prompt(const VqaSample& s, QaProtocol protocol) {
    if (protocol == QaProtocol::multiple_choice) {
        std::string p = s.question + "\n";
        if (!s.options) throw DataError("multiple-choice sample '" + s.id + "' has no options");
        for (size_t i = 0; i < s.options->size(); ++i) {
            p += static_cast<char>('A' + i);
            p += ". " + (*s.options)[i] + "\n";
        }
        p += "answer:";
        return p;
    }
    return s.question + "\nanswer yes, no, or maybe:";
}

std::string ic_prompt(const std::vector<std::string>& classes) {
    std::string p = "possible classes: ";
    for (size_t i = 0; i < classes.size(); ++i) {
        if (i) p += ", ";
        p += classes[i];
    }
    p += "\nwhich class is shown in the image?";
    return p;
}

std::optional<size_t> extract_choice(const std::string& output,
                                     const std::vector<std::string>& options) {
    // rule 1: standalone option letter
    for (const auto& tok : tokenize(output)) {
        if (tok.size() == 1 && tok[0] >= 'a' && tok[0] < 'a' + static_cast<int>(options.size())) {
            return static_cast<size_t>(tok[0] - 'a');
        }
    }
    // rule 2: "answer is X"
    static const std::regex answer_is(R"(answer\s+is\s*\(?\s*([A-Za-z])\)?)",
                                      std::regex::icase);
    std::smatch m;
    if (std::regex_search(output, m, answer_is)) {
        const char c = static_cast<char>(std::tolower(m[1].str()[0]));
        if (c >= 'a' && c < 'a' + static_cast<int>(options.size())) {
            return static_cast<size_t>(c - 'a');
        }
    }
    // rule 3: best token overlap with an option text
    const auto out_toks = tokenize(output);
    size_t best = 0, best_overlap = 0;
    for (size_t i = 0; i < options.size(); ++i) {
        const size_t ov = clipped_overlap(out_toks, tokenize(options[i]));
        if (ov > best_overlap) {
            best_overlap = ov;
            best = i;
        }
    }
    if (best_overlap > 0) return best;
    return std::nullopt;
}

std::string extract_yes_no_maybe(const std::string& output) {
    for (const auto& tok : tokenize(output)) {
        if (tok == "yes" || tok == "no" || tok == "maybe") return tok;
    }
    return "";
}

// ---------------------------------------------------------------------------
// evaluation drivers
// ---------------------------------------------------------------------------

namespace {

std::optional<util::Image> sample_image_data(const VqaSample& s) {
    if (!s.image) return std::nullopt;
    return util::load_image(s.image->path);
}

const VqaSample& as_vqa(const corpus::MultimodalSample& s, const char* task) {
    const auto* vqa = std::get_if<VqaSample>(&s);
    if (!vqa) {
        throw DataError(std::string(task) + " evaluation expects vqa records, got '" +
                        std::string(corpus::sample_type(s)) + "'");
    }
    return *vqa;
}

// Runs generation for every sample; predictions land in input order so the
// report is identical for any worker count.
std::vector<std::string> generate_all(ModelUnderTest& m, const Manifest& dataset,
                                      const std::function<std::string(const VqaSample&)>& prompt,
                                      int workers) {
    const size_t n = dataset.records.size();
    std::vector<std::string> predictions(n);
    auto run_range = [&](size_t begin, size_t end) {
        for (size_t i = begin; i < end; ++i) {
            const VqaSample& s = as_vqa(dataset.records[i], "generation");
            predictions[i] = m.generate(sample_image_data(s), prompt(s));
        }
    };
    if (workers <= 1 || n < 2) {
        run_range(0, n);
        return predictions;
    }
    const size_t k = std::min<size_t>(static_cast<size_t>(workers), n);
    std::vector<std::thread> threads;
    const size_t chunk = (n + k - 1) / k;
    for (size_t t = 0; t < k; ++t) {
        const size_t begin = t * chunk;
        const size_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        threads.emplace_back(run_range, begin, end);
    }
    for (auto& t : threads) t.join();
    return predictions;
}

}  // namespace

MetricReport evaluate_vqa(ModelUnderTest& m, const Manifest& dataset, int workers) {
    MetricReport report;
    report.dataset = dataset.name;
    report.task = "vqa";
    report.sample_count = dataset.records.size();

    const auto predictions =
        generate_all(m, dataset, [](const VqaSample& s) { return vqa_prompt(s); }, workers);

    std::vector<double> open_em, closed_em, open_recall, all_recall, all_f1, all_bleu;
    for (size_t i = 0; i < dataset.records.size(); ++i) {
        const VqaSample& s = as_vqa(dataset.records[i], "vqa");
        const std::string& pred = predictions[i];
        const bool em = normalize_answer(pred) == normalize_answer(s.answer);
        const Prf prf = token_prf(pred, s.answer);
        const double b = bleu1(pred, s.answer);
        const bool open = s.question_kind == corpus::QuestionKind::open;
        (open ? open_em : closed_em).push_back(em ? 1.0 : 0.0);
        if (open) open_recall.push_back(prf.recall);
        all_recall.push_back(prf.recall);
        all_f1.push_back(prf.f1);
        all_bleu.push_back(b);
        report.detail.push_back({{"id", s.id},
                                 {"prediction", pred},
                                 {"gold", s.answer},
                                 {"question_kind", corpus::to_string(s.question_kind)},
                                 {"exact_match", em ? 1.0 : 0.0},
                                 {"recall", prf.recall},
                                 {"f1", prf.f1},
                                 {"bleu1", b}});
    }
    if (!open_em.empty()) {
        report.metrics["O-A"] = mean_of(open_em);
        report.metrics["O-R"] = mean_of(open_recall);
    } else {
        report.notes.push_back("no open questions in dataset");
    }
    if (!closed_em.empty()) {
        report.metrics["C-A"] = mean_of(closed_em);
    } else {
        report.notes.push_back("no closed questions in dataset");
    }
    report.metrics["recall"] = mean_of(all_recall);
    report.metrics["f1"] = mean_of(all_f1);
    report.metrics["bleu1"] = mean_of(all_bleu);
    return report;
}

MetricReport evaluate_qa(ModelUnderTest& m, const Manifest& dataset, QaProtocol protocol,
                         int workers) {
    MetricReport report;
    report.dataset = dataset.name;
    report.task = "qa";
    report.sample_count = dataset.records.size();

    const auto predictions = generate_all(
        m, dataset, [protocol](const VqaSample& s) { return qa_prompt(s, protocol); }, workers);

    std::vector<double> correct;
    for (size_t i = 0; i < dataset.records.size(); ++i) {
        const VqaSample& s = as_vqa(dataset.records[i], "qa");
        const std::string& pred = predictions[i];
        bool ok = false;
        bool extraction_failed = false;
        std::string extracted;
        if (protocol == QaProtocol::multiple_choice) {
            if (!s.options) throw DataError("multiple-choice sample '" + s.id + "' has no options");
            size_t gold_idx = s.options->size();
            for (size_t k = 0; k < s.options->size(); ++k) {
                if ((*s.options)[k] == s.answer) gold_idx = k;
            }
            if (gold_idx == s.options->size()) {
                throw DataError("sample '" + s.id + "': gold answer not among options");
            }
            const auto choice = extract_choice(pred, *s.options);
            if (choice) {
                extracted = std::string(1, static_cast<char>('A' + *choice));
                ok = *choice == gold_idx;
            } else {
                extraction_failed = true;  // counted incorrect, never dropped
            }
        } else {
            extracted = extract_yes_no_maybe(pred);
            extraction_failed = extracted.empty();
            ok = !extraction_failed && extracted == normalize_answer(s.answer);
        }
        correct.push_back(ok ? 1.0 : 0.0);
        report.detail.push_back({{"id", s.id},
                                 {"prediction", pred},
                                 {"extracted", extracted},
                                 {"gold", s.answer},
                                 {"correct", ok ? 1.0 : 0.0},
                                 {"extraction_failed", extraction_failed}});
    }
    report.metrics["accuracy"] = mean_of(correct);
    return report;
}

MetricReport evaluate_ic(ModelUnderTest& m, const Manifest& dataset, int workers) {
    const auto& classes = dataset.classes;
    if (classes.size() < 2) {
        throw DataError("IC dataset '" + dataset.name +
                        "': macro metrics undefined without at least two classes");
    }
    MetricReport report;
    report.dataset = dataset.name;
    report.task = "ic";
    report.sample_count = dataset.records.size();

    const std::string prompt = ic_prompt(classes);
    const auto predictions = generate_all(
        m, dataset, [&prompt](const VqaSample&) { return prompt; }, workers);

    const size_t n = dataset.records.size();
    const size_t n_classes = classes.size();
    std::vector<int> gold(n), predicted(n);
    MatrixXd scores(n, static_cast<Eigen::Index>(n_classes));
    std::vector<double> correct;

    for (size_t i = 0; i < n; ++i) {
        const VqaSample& s = as_vqa(dataset.records[i], "ic");
        int gold_idx = -1;
        for (size_t k = 0; k < n_classes; ++k) {
            if (normalize_answer(classes[k]) == normalize_answer(s.answer)) {
                gold_idx = static_cast<int>(k);
            }
        }
        if (gold_idx < 0) {
            throw DataError("IC sample '" + s.id + "': answer not in the class list");
        }
        gold[i] = gold_idx;

        const std::string& pred = predictions[i];
        predicted[i] = static_cast<int>(classify_by_bleu(pred, classes));

        // similarity scores, normalized; uniform fallback when all are zero
        double sum = 0.0;
        for (size_t k = 0; k < n_classes; ++k) {
            const double b = bleu1(pred, classes[k]);
            scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = b;
            sum += b;
        }
        if (sum > 0) {
            scores.row(static_cast<Eigen::Index>(i)) /= sum;
        } else {
            scores.row(static_cast<Eigen::Index>(i)).setConstant(1.0 / static_cast<double>(n_classes));
        }

        const bool ok = predicted[i] == gold[i];
        correct.push_back(ok ? 1.0 : 0.0);
        json score_row = json::array();
        for (size_t k = 0; k < n_classes; ++k) {
            score_row.push_back(scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)));
        }
        report.detail.push_back({{"id", s.id},
                                 {"prediction", pred},
                                 {"gold", classes[static_cast<size_t>(gold_idx)]},
                                 {"gold_index", gold_idx},
                                 {"predicted_index", predicted[i]},
                                 {"correct", ok ? 1.0 : 0.0},
                                 {"scores", score_row}});
    }

    // per-class F1 over the full class list
    double f1_sum = 0.0;
    for (size_t k = 0; k < n_classes; ++k) {
        double tp = 0, fp = 0, fn = 0;
        for (size_t i = 0; i < n; ++i) {
            const bool is_gold = gold[i] == static_cast<int>(k);
            const bool is_pred = predicted[i] == static_cast<int>(k);
            tp += is_gold && is_pred ? 1 : 0;
            fp += !is_gold && is_pred ? 1 : 0;
            fn += is_gold && !is_pred ? 1 : 0;
        }
        const double p = tp + fp > 0 ? tp / (tp + fp) : 0.0;
        const double r = tp + fn > 0 ? tp / (tp + fn) : 0.0;
        f1_sum += p + r > 0 ? 2.0 * p * r / (p + r) : 0.0;
    }

    for (size_t k = 0; k < n_classes; ++k) {
        bool present = false;
        for (size_t i = 0; i < n; ++i) present = present || gold[i] == static_cast<int>(k);
        if (!present) {
            report.notes.push_back("class absent from gold, skipped in macro AUC: " + classes[k]);
        }
    }

    report.metrics["accuracy"] = mean_of(correct);
    report.metrics["macro_f1"] = f1_sum / static_cast<double>(n_classes);
    report.metrics["macro_auc"] = macro_auc(scores, gold);
    return report;
}

}  // namespace vlmkit::eval
