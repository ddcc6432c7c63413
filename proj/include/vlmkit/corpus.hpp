#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

namespace vlmkit::corpus {

enum class Language { zh, en };
enum class Domain { medical, general };
enum class Task { ic, qa, vqa, captioning };
enum class QuestionKind { open, closed };

std::string to_string(Language v);
std::string to_string(Domain v);
std::string to_string(Task v);
std::string to_string(QuestionKind v);
Language language_from_string(std::string_view s);
Domain domain_from_string(std::string_view s);
Task task_from_string(std::string_view s);
QuestionKind question_kind_from_string(std::string_view s);

// Reference to a lossless raster asset. `path` is absolute in memory;
// manifests serialize it relative to their own directory.
struct ImageRef {
    std::string path;
    int width = 0;
    int height = 0;
    int channels = 1;
};

struct TextRecord {
    std::string id;
    std::string text;
    Language language = Language::en;
    std::string source;
    Domain domain = Domain::general;
};

struct ImageCaptionSample {
    std::string id;
    ImageRef image;
    std::string caption;
    Language language = Language::en;
    Domain domain = Domain::general;
};

// `image` is optional so the same record type houses text-only QA benchmarks.
struct VqaSample {
    std::string id;
    std::optional<ImageRef> image;
    std::string question;
    std::string answer;
    QuestionKind question_kind = QuestionKind::open;
    std::optional<std::vector<std::string>> options;
    Domain domain = Domain::general;
};

struct Turn {
    std::string question;
    std::string answer;
};

struct ConversationSample {
    std::string id;
    std::optional<ImageRef> image;
    std::vector<Turn> turns;
};

// The universal corpus record.
using MultimodalSample =
    std::variant<TextRecord, ImageCaptionSample, VqaSample, ConversationSample>;

const std::string& sample_id(const MultimodalSample& s);
std::string_view sample_type(const MultimodalSample& s);  // text|caption|vqa|conversation

// The text a curation filter inspects: record text, caption, question+answer,
// or all turns joined.
std::string primary_text(const MultimodalSample& s);

const ImageRef* sample_image(const MultimodalSample& s);

struct Manifest {
    std::string name;
    Task task = Task::captioning;
    std::vector<MultimodalSample> records;
    // Class descriptor list for IC datasets, empty otherwise.
    std::vector<std::string> classes;
    // Directory the manifest was loaded from; not serialized.
    std::filesystem::path base_dir;

    std::map<std::string, size_t> counts() const;
    size_t size() const { return records.size(); }
};

struct LoadOptions {
    bool validate_assets = true;
};

// Line-delimited JSON: a header line followed by one record per line.
// Validates invariants (unique ids, declared counts, image assets).
Manifest load_manifest(const std::filesystem::path& path, const LoadOptions& opts = {});
void write_manifest(const std::filesystem::path& path, const Manifest& m);

// Raw CLEF-style record carrying several QA pairs for one image.
struct RawMultiQa {
    struct Pair {
        std::string question;
        std::string answer;
        QuestionKind question_kind = QuestionKind::open;
        std::optional<std::vector<std::string>> options;
    };
    std::string id;
    ImageRef image;
    std::vector<Pair> pairs;
    Domain domain = Domain::medical;
};

// One VqaSample per pair, ids derived as "<parent>#<index>", input order kept.
std::vector<VqaSample> expand_multi_qa(const RawMultiQa& record);

// Raw files hold {"type":"multi_vqa", ...} lines; they are inputs to
// expansion, not valid manifest records.
std::vector<RawMultiQa> load_multi_qa(const std::filesystem::path& path);

nlohmann::json sample_to_json(const MultimodalSample& s, const std::filesystem::path& base_dir);
MultimodalSample sample_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);

}  // namespace vlmkit::corpus
