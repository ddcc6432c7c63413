#include "vlmkit/corpus.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "vlmkit/error.hpp"
#include "vlmkit/util/image.hpp"

namespace vlmkit::corpus {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Language v) { return v == Language::zh ? "zh" : "en"; }
std::string to_string(Domain v) { return v == Domain::medical ? "medical" : "general"; }
std::string to_string(Task v) {
    switch (v) {
        case Task::ic: return "IC";
        case Task::qa: return "QA";
        case Task::vqa: return "VQA";
        case Task::captioning: return "captioning";
    }
    return "captioning";
}
std::string to_string(QuestionKind v) { return v == QuestionKind::open ? "open" : "closed"; }

Language language_from_string(std::string_view s) {
    if (s == "zh") return Language::zh;
    if (s == "en") return Language::en;
    throw DataError("unknown language tag: " + std::string(s));
}
Domain domain_from_string(std::string_view s) {
    if (s == "medical") return Domain::medical;
    if (s == "general") return Domain::general;
    throw DataError("unknown domain tag: " + std::string(s));
}
Task task_from_string(std::string_view s) {
    if (s == "IC") return Task::ic;
    if (s == "QA") return Task::qa;
    if (s == "VQA") return Task::vqa;
    if (s == "captioning") return Task::captioning;
    throw DataError("unknown task tag: " + std::string(s));
}
QuestionKind question_kind_from_string(std::string_view s) {
    if (s == "open") return QuestionKind::open;
    if (s == "closed") return QuestionKind::closed;
    throw DataError("unknown question_kind tag: " + std::string(s));
}

const std::string& sample_id(const MultimodalSample& s) {
    return std::visit([](const auto& r) -> const std::string& { return r.id; }, s);
}

std::string_view sample_type(const MultimodalSample& s) {
    struct V {
        std::string_view operator()(const TextRecord&) const { return "text"; }
        std::string_view operator()(const ImageCaptionSample&) const { return "caption"; }
        std::string_view operator()(const VqaSample&) const { return "vqa"; }
        std::string_view operator()(const ConversationSample&) const { return "conversation"; }
    };
    return std::visit(V{}, s);
}

std::string primary_text(const MultimodalSample& s) {
    struct V {
        std::string operator()(const TextRecord& r) const { return r.text; }
        std::string operator()(const ImageCaptionSample& r) const { return r.caption; }
        std::string operator()(const VqaSample& r) const { return r.question + " " + r.answer; }
        std::string operator()(const ConversationSample& r) const {
            std::string out;
            for (const auto& t : r.turns) {
                if (!out.empty()) out += " ";
                out += t.question + " " + t.answer;
            }
            return out;
        }
    };
    return std::visit(V{}, s);
}

const ImageRef* sample_image(const MultimodalSample& s) {
    struct V {
        const ImageRef* operator()(const TextRecord&) const { return nullptr; }
        const ImageRef* operator()(const ImageCaptionSample& r) const { return &r.image; }
        const ImageRef* operator()(const VqaSample& r) const {
            return r.image ? &*r.image : nullptr;
        }
        const ImageRef* operator()(const ConversationSample& r) const {
            return r.image ? &*r.image : nullptr;
        }
    };
    return std::visit(V{}, s);
}

std::map<std::string, size_t> Manifest::counts() const {
    std::map<std::string, size_t> out;
    for (const auto& r : records) out[std::string(sample_type(r))]++;
    return out;
}

namespace {

json image_to_json(const ImageRef& img, const fs::path& base_dir) {
    fs::path p = img.path;
    if (!base_dir.empty() && p.is_absolute()) {
        std::error_code ec;
        const fs::path rel = fs::relative(p, base_dir, ec);
        if (!ec && !rel.empty()) p = rel;
    }
    return json{{"path", p.generic_string()},
                {"width", img.width},
                {"height", img.height},
                {"channels", img.channels}};
}

ImageRef image_from_json(const json& j, const fs::path& base_dir) {
    ImageRef img;
    img.path = j.at("path").get<std::string>();
    img.width = j.at("width").get<int>();
    img.height = j.at("height").get<int>();
    img.channels = j.value("channels", 1);
    fs::path p = img.path;
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    img.path = p.lexically_normal().string();
    return img;
}

json turns_to_json(const std::vector<Turn>& turns) {
    json arr = json::array();
    for (const auto& t : turns) arr.push_back({{"question", t.question}, {"answer", t.answer}});
    return arr;
}

}  // namespace

json sample_to_json(const MultimodalSample& s, const fs::path& base_dir) {
    struct V {
        const fs::path& base;
        json operator()(const TextRecord& r) const {
            return json{{"type", "text"},       {"id", r.id},
                        {"text", r.text},       {"language", to_string(r.language)},
                        {"source", r.source},   {"domain", to_string(r.domain)}};
        }
        json operator()(const ImageCaptionSample& r) const {
            return json{{"type", "caption"},
                        {"id", r.id},
                        {"image", image_to_json(r.image, base)},
                        {"caption", r.caption},
                        {"language", to_string(r.language)},
                        {"domain", to_string(r.domain)}};
        }
        json operator()(const VqaSample& r) const {
            json j{{"type", "vqa"},
                   {"id", r.id},
                   {"question", r.question},
                   {"answer", r.answer},
                   {"question_kind", to_string(r.question_kind)},
                   {"domain", to_string(r.domain)}};
            if (r.image) j["image"] = image_to_json(*r.image, base);
            if (r.options) j["options"] = *r.options;
            return j;
        }
        json operator()(const ConversationSample& r) const {
            json j{{"type", "conversation"}, {"id", r.id}, {"turns", turns_to_json(r.turns)}};
            if (r.image) j["image"] = image_to_json(*r.image, base);
            return j;
        }
    };
    return std::visit(V{base_dir}, s);
}

MultimodalSample sample_from_json(const json& j, const fs::path& base_dir) {
    const std::string type = j.at("type").get<std::string>();
    if (type == "text") {
        TextRecord r;
        r.id = j.at("id").get<std::string>();
        r.text = j.at("text").get<std::string>();
        r.language = language_from_string(j.at("language").get<std::string>());
        r.source = j.value("source", "");
        r.domain = domain_from_string(j.at("domain").get<std::string>());
        return r;
    }
    if (type == "caption") {
        ImageCaptionSample r;
        r.id = j.at("id").get<std::string>();
        r.image = image_from_json(j.at("image"), base_dir);
        r.caption = j.at("caption").get<std::string>();
        r.language = language_from_string(j.at("language").get<std::string>());
        r.domain = domain_from_string(j.at("domain").get<std::string>());
        return r;
    }
    if (type == "vqa") {
        VqaSample r;
        r.id = j.at("id").get<std::string>();
        if (j.contains("image")) r.image = image_from_json(j.at("image"), base_dir);
        r.question = j.at("question").get<std::string>();
        r.answer = j.at("answer").get<std::string>();
        r.question_kind = question_kind_from_string(j.at("question_kind").get<std::string>());
        if (j.contains("options")) r.options = j.at("options").get<std::vector<std::string>>();
        r.domain = domain_from_string(j.at("domain").get<std::string>());
        return r;
    }
    if (type == "conversation") {
        ConversationSample r;
        r.id = j.at("id").get<std::string>();
        if (j.contains("image")) r.image = image_from_json(j.at("image"), base_dir);
        for (const auto& t : j.at("turns")) {
            r.turns.push_back(
                {t.at("question").get<std::string>(), t.at("answer").get<std::string>()});
        }
        if (r.turns.empty()) throw DataError("conversation '" + r.id + "' has no turns");
        return r;
    }
    throw DataError("unknown record type: " + type);
}

namespace {

void validate_record(const MultimodalSample& s, const LoadOptions& opts) {
    if (const auto* cap = std::get_if<ImageCaptionSample>(&s)) {
        if (cap->caption.empty()) throw DataError("caption '" + cap->id + "' is empty");
    }
    if (const auto* vqa = std::get_if<VqaSample>(&s)) {
        if (vqa->options) {
            bool found = false;
            for (const auto& o : *vqa->options) found = found || o == vqa->answer;
            if (!found) {
                throw DataError("vqa '" + vqa->id + "': options do not contain the answer");
            }
        }
    }
    if (!opts.validate_assets) return;
    if (const ImageRef* img = sample_image(s)) {
        if (!fs::exists(img->path)) {
            throw DataError("missing asset: record '" + sample_id(s) + "' references " +
                            img->path);
        }
        const util::Image decoded = util::load_image(img->path);
        if (decoded.width != img->width || decoded.height != img->height ||
            decoded.channels != img->channels) {
            std::ostringstream msg;
            msg << "asset mismatch for record '" << sample_id(s) << "': declared " << img->width
                << "x" << img->height << "x" << img->channels << ", decoded " << decoded.width
                << "x" << decoded.height << "x" << decoded.channels;
            throw DataError(msg.str());
        }
    }
}

}  // namespace

Manifest load_manifest(const fs::path& path, const LoadOptions& opts) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open manifest: " + path.string());

    Manifest m;
    m.base_dir = path.parent_path();

    std::string line;
    size_t line_no = 0;
    std::map<std::string, size_t> declared;
    bool have_header = false;
    std::set<std::string> seen_ids;

    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(line_no) +
                            ": malformed record: " + e.what());
        }
        try {
            const std::string type = j.at("type").get<std::string>();
            if (type == "header") {
                if (have_header) {
                    throw DataError("duplicate header");
                }
                have_header = true;
                m.name = j.at("name").get<std::string>();
                m.task = task_from_string(j.at("task").get<std::string>());
                if (j.contains("classes")) {
                    m.classes = j.at("classes").get<std::vector<std::string>>();
                }
                for (const auto& [k, v] : j.at("counts").items()) {
                    declared[k] = v.get<size_t>();
                }
                continue;
            }
            MultimodalSample s = sample_from_json(j, m.base_dir);
            const std::string& id = sample_id(s);
            if (!seen_ids.insert(id).second) {
                throw DataError("integrity error: duplicate id '" + id + "'");
            }
            validate_record(s, opts);
            m.records.push_back(std::move(s));
        } catch (const json::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(line_no) +
                            ": malformed record: " + e.what());
        } catch (const DataError& e) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (!have_header) throw DataError(path.string() + ": missing header record");

    const auto actual = m.counts();
    for (const auto& [k, v] : declared) {
        const auto it = actual.find(k);
        const size_t got = it == actual.end() ? 0 : it->second;
        if (got != v) {
            throw DataError(path.string() + ": integrity error: header declares " +
                            std::to_string(v) + " '" + k + "' records, found " +
                            std::to_string(got));
        }
    }
    for (const auto& [k, v] : actual) {
        if (v != 0 && declared.find(k) == declared.end()) {
            throw DataError(path.string() + ": integrity error: " + std::to_string(v) + " '" + k +
                            "' records not declared in header");
        }
    }
    return m;
}

void write_manifest(const fs::path& path, const Manifest& m) {
    if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write manifest: " + path.string());

    const fs::path base = path.parent_path();
    json counts = json::object();
    for (const auto& [k, v] : m.counts()) counts[k] = v;
    json header{{"type", "header"}, {"name", m.name}, {"task", to_string(m.task)},
                {"counts", counts}};
    if (!m.classes.empty()) header["classes"] = m.classes;
    f << header.dump() << "\n";
    for (const auto& r : m.records) f << sample_to_json(r, base).dump() << "\n";
    if (!f) throw IoError("failed writing manifest: " + path.string());
}

std::vector<VqaSample> expand_multi_qa(const RawMultiQa& record) {
    if (record.pairs.empty()) {
        throw DataError("empty record: multi-QA record '" + record.id + "' has no QA pairs");
    }
    std::vector<VqaSample> out;
    out.reserve(record.pairs.size());
    for (size_t i = 0; i < record.pairs.size(); ++i) {
        const auto& p = record.pairs[i];
        VqaSample s;
        s.id = record.id + "#" + std::to_string(i);
        s.image = record.image;
        s.question = p.question;
        s.answer = p.answer;
        s.question_kind = p.question_kind;
        s.options = p.options;
        s.domain = record.domain;
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<RawMultiQa> load_multi_qa(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open raw file: " + path.string());
    const fs::path base = path.parent_path();

    std::vector<RawMultiQa> out;
    std::string line;
    size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const json j = json::parse(line);
            if (j.at("type").get<std::string>() != "multi_vqa") {
                throw DataError("expected multi_vqa record");
            }
            RawMultiQa r;
            r.id = j.at("id").get<std::string>();
            r.image = image_from_json(j.at("image"), base);
            r.domain = domain_from_string(j.at("domain").get<std::string>());
            for (const auto& q : j.at("qa")) {
                RawMultiQa::Pair p;
                p.question = q.at("question").get<std::string>();
                p.answer = q.at("answer").get<std::string>();
                p.question_kind =
                    question_kind_from_string(q.value("question_kind", std::string("open")));
                if (q.contains("options")) {
                    p.options = q.at("options").get<std::vector<std::string>>();
                }
                r.pairs.push_back(std::move(p));
            }
            out.push_back(std::move(r));
        } catch (const json::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(line_no) +
                            ": malformed record: " + e.what());
        }
    }
    return out;
}

}  // namespace vlmkit::corpus
