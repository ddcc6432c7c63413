#include "vlmkit/fixtures.hpp"

#include <fstream>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "vlmkit/corpus.hpp"
#include "vlmkit/error.hpp"
#include "vlmkit/util/image.hpp"
#include "vlmkit/util/rng.hpp"

namespace vlmkit::fixtures {

namespace fs = std::filesystem;
using corpus::Domain;
using corpus::ImageRef;
using corpus::Language;
using corpus::Manifest;
using corpus::QuestionKind;
using corpus::Task;
using nlohmann::json;

namespace {

// ----------------------------- vocabulary -----------------------------

const std::vector<std::string> kModalities = {"ct scan", "mri scan", "xray image",
                                              "ultrasound image"};
const std::vector<std::string> kOrgans = {"lung", "liver", "brain", "heart"};
const std::vector<std::string> kFindings = {"lesion", "nodule", "effusion", "fracture"};

const std::vector<std::string> kModalitiesZh = {"CT检查", "核磁共振", "X光检查", "超声检查"};
const std::vector<std::string> kOrgansZh = {"肺部", "肝脏", "大脑", "心脏"};
const std::vector<std::string> kFindingsZh = {"病灶", "结节", "积液", "骨折"};

const std::vector<std::string> kColors = {"red", "green", "blue", "yellow", "purple", "orange"};
const std::vector<std::string> kShapes = {"circle", "square", "triangle", "star",
                                          "hexagon", "diamond"};
const std::vector<std::string> kSizes = {"small", "large"};

std::string fill(const std::string& tmpl, const std::map<std::string, std::string>& vars) {
    std::string out = tmpl;
    for (const auto& [key, value] : vars) {
        const std::string tag = "{" + key + "}";
        size_t pos;
        while ((pos = out.find(tag)) != std::string::npos) out.replace(pos, tag.size(), value);
    }
    return out;
}

// ----------------------------- images -----------------------------

// Medical-style images: three horizontal intensity bands keyed by the
// (modality, organ, finding) triple plus mild deterministic noise.
util::Image medical_image(int m, int o, int f) {
    util::Image img;
    img.width = img.height = 32;
    img.channels = 1;
    img.pixels.resize(32 * 32);
    util::Rng noise(util::splitmix64(static_cast<uint64_t>(m * 100 + o * 10 + f)));
    for (int y = 0; y < 32; ++y) {
        int base;
        if (y < 11) {
            base = 20 + m * 50;
        } else if (y < 22) {
            base = 25 + o * 50;
        } else {
            base = 30 + f * 50;
        }
        for (int x = 0; x < 32; ++x) {
            const int v = base + static_cast<int>(noise.below(9)) - 4;
            img.pixels[static_cast<size_t>(y) * 32 + x] =
                static_cast<uint8_t>(std::clamp(v, 0, 255));
        }
    }
    return img;
}

// General-style images: two vertical bands keyed by (color, shape).
util::Image general_image(int c, int s) {
    util::Image img;
    img.width = img.height = 32;
    img.channels = 1;
    img.pixels.resize(32 * 32);
    util::Rng noise(util::splitmix64(static_cast<uint64_t>(7000 + c * 10 + s)));
    for (int y = 0; y < 32; ++y) {
        for (int x = 0; x < 32; ++x) {
            const int base = x < 16 ? 15 + c * 40 : 40 + s * 35;
            const int v = base + static_cast<int>(noise.below(9)) - 4;
            img.pixels[static_cast<size_t>(y) * 32 + x] =
                static_cast<uint8_t>(std::clamp(v, 0, 255));
        }
    }
    return img;
}

struct ImageStore {
    fs::path images_dir;

    ImageRef medical(int m, int o, int f) {
        const std::string name =
            "med_" + std::to_string(m) + std::to_string(o) + std::to_string(f) + ".pgm";
        const fs::path p = images_dir / name;
        if (!fs::exists(p)) util::save_image(p, medical_image(m, o, f));
        return {fs::absolute(p).lexically_normal().string(), 32, 32, 1};
    }
    ImageRef general(int c, int s) {
        const std::string name = "gen_" + std::to_string(c) + std::to_string(s) + ".pgm";
        const fs::path p = images_dir / name;
        if (!fs::exists(p)) util::save_image(p, general_image(c, s));
        return {fs::absolute(p).lexically_normal().string(), 32, 32, 1};
    }
};

// ----------------------------- combo enumeration -----------------------------

struct MedCombo {
    int m, o, f, t;  // modality, organ, finding, template
};
struct GenCombo {
    int c, s, z, t;  // color, shape, size, template
};

std::vector<MedCombo> med_combos(int n_templates, util::Rng& rng) {
    std::vector<MedCombo> combos;
    for (int t = 0; t < n_templates; ++t) {
        for (int m = 0; m < 4; ++m) {
            for (int o = 0; o < 4; ++o) {
                for (int f = 0; f < 4; ++f) combos.push_back({m, o, f, t});
            }
        }
    }
    rng.shuffle(combos);
    return combos;
}

std::vector<GenCombo> gen_combos(int n_templates, util::Rng& rng) {
    std::vector<GenCombo> combos;
    for (int t = 0; t < n_templates; ++t) {
        for (int c = 0; c < 6; ++c) {
            for (int s = 0; s < 6; ++s) {
                for (int z = 0; z < 2; ++z) combos.push_back({c, s, z, t});
            }
        }
    }
    rng.shuffle(combos);
    return combos;
}

std::map<std::string, std::string> med_vars(const MedCombo& c) {
    return {{"modality", kModalities[c.m]},
            {"organ", kOrgans[c.o]},
            {"finding", kFindings[c.f]},
            {"modality_zh", kModalitiesZh[c.m]},
            {"organ_zh", kOrgansZh[c.o]},
            {"finding_zh", kFindingsZh[c.f]}};
}

std::map<std::string, std::string> gen_vars(const GenCombo& c) {
    return {{"color", kColors[c.c]}, {"shape", kShapes[c.s]}, {"size", kSizes[c.z]}};
}

const std::vector<std::string> kMedTextTemplates = {
    "patients with a {finding} in the {organ} often require a {modality} for assessment.",
    "a {modality} is the preferred study when a {finding} of the {organ} is suspected.",
    "follow up {modality} of the {organ} confirmed the previously noted {finding}.",
    "the radiology report describes a {finding} involving the {organ} on the {modality}.",
    "clinical guidelines recommend a {modality} to characterize any {organ} {finding}.",
    "no interval change of the {organ} {finding} was seen on the repeat {modality}.",
    "the {finding} identified in the {organ} was measured again on the {modality}.",
    "treatment planning for the {organ} {finding} relied on the recent {modality}.",
};

const std::vector<std::string> kMedTextTemplatesZh = {
    "患者的{organ_zh}发现{finding_zh}，建议进行{modality_zh}复查。",
    "{modality_zh}显示{organ_zh}存在{finding_zh}，需要随访观察。",
    "本次{modality_zh}提示{organ_zh}的{finding_zh}较前无明显变化。",
    "结合病史，{organ_zh}的{finding_zh}应通过{modality_zh}进一步评估。",
};

const std::vector<std::string> kGenTextTemplates = {
    "the {size} {color} {shape} sits near the corner of the canvas.",
    "a {color} {shape} of {size} proportion anchors the composition.",
    "observers first notice the {size} {shape} painted in bright {color}.",
    "the sketch pairs a {size} {color} {shape} with a plain background.",
    "each study page repeats the same {size} {color} {shape} motif.",
    "the designer chose a {color} {shape} rendered at {size} scale.",
};

const std::vector<std::string> kMedCaptionTemplates = {
    "this {modality} shows a {finding} in the {organ}.",
    "a {finding} of the {organ} is seen on this {modality}.",
    "the {organ} demonstrates a {finding} on the {modality}.",
    "{modality} view with a {finding} affecting the {organ}.",
    "imaging reveals a {organ} {finding} on the {modality}.",
    "the {modality} highlights a {finding} within the {organ}.",
};

const std::vector<std::string> kGenCaptionTemplates = {
    "a {size} {color} {shape} on a plain background.",
    "the picture shows a {size} {color} {shape}.",
    "a simple drawing of a {color} {shape}, {size} in scale.",
    "one {size} {shape} colored {color} fills the frame.",
    "a {color} {shape} appears at {size} scale.",
    "minimal art: a {size} {color} {shape}.",
};

// ----------------------------- manifest helpers -----------------------------

void write(const fs::path& path, Manifest& m) {
    corpus::write_manifest(path, m);
}

std::string pad_id(const char* prefix, size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%04zu", prefix, i);
    return buf;
}

}  // namespace

void generate_fixtures(const fs::path& dir, uint64_t seed) {
    fs::create_directories(dir);
    // regenerate owned subtrees from scratch; stale assets from an older
    // generator must not leak into the new corpus
    for (const char* sub : {"images", "curation", "train", "eval", "overfit", "raw"}) {
        fs::remove_all(dir / sub);
        fs::create_directories(dir / sub);
    }
    ImageStore store{dir / "images"};
    util::Rng rng(util::derive_seed(seed, "fixtures"));

    // ---------------- train: medical text ----------------
    {
        Manifest m;
        m.name = "toy-med-text";
        m.task = Task::qa;
        auto combos = med_combos(static_cast<int>(kMedTextTemplates.size()), rng);
        for (size_t i = 0; i < 320; ++i) {
            const auto& c = combos[i];
            corpus::TextRecord r;
            r.id = pad_id("mt", i);
            r.text = fill(kMedTextTemplates[static_cast<size_t>(c.t)], med_vars(c));
            r.language = Language::en;
            r.source = "toy-med";
            r.domain = Domain::medical;
            m.records.emplace_back(std::move(r));
        }
        auto zh_combos = med_combos(static_cast<int>(kMedTextTemplatesZh.size()), rng);
        for (size_t i = 0; i < 100; ++i) {
            const auto& c = zh_combos[i];
            corpus::TextRecord r;
            r.id = pad_id("mz", i);
            r.text = fill(kMedTextTemplatesZh[static_cast<size_t>(c.t)], med_vars(c));
            r.language = Language::zh;
            r.source = "toy-med-zh";
            r.domain = Domain::medical;
            m.records.emplace_back(std::move(r));
        }
        write(dir / "train/text_medical.jsonl", m);
    }

    // ---------------- train: general text ----------------
    {
        Manifest m;
        m.name = "toy-gen-text";
        m.task = Task::qa;
        auto combos = gen_combos(static_cast<int>(kGenTextTemplates.size()), rng);
        for (size_t i = 0; i < 300; ++i) {
            const auto& c = combos[i];
            corpus::TextRecord r;
            r.id = pad_id("gt", i);
            r.text = fill(kGenTextTemplates[static_cast<size_t>(c.t)], gen_vars(c));
            r.language = Language::en;
            r.source = "toy-gen";
            r.domain = Domain::general;
            m.records.emplace_back(std::move(r));
        }
        write(dir / "train/text_general.jsonl", m);
    }

    // ---------------- train: captions ----------------
    {
        Manifest m;
        m.name = "toy-med-captions";
        m.task = Task::captioning;
        auto combos = med_combos(static_cast<int>(kMedCaptionTemplates.size()), rng);
        for (size_t i = 0; i < 300; ++i) {
            const auto& c = combos[i];
            corpus::ImageCaptionSample r;
            r.id = pad_id("mc", i);
            r.image = store.medical(c.m, c.o, c.f);
            r.caption = fill(kMedCaptionTemplates[static_cast<size_t>(c.t)], med_vars(c));
            r.language = Language::en;
            r.domain = Domain::medical;
            m.records.emplace_back(std::move(r));
        }
        write(dir / "train/captions_medical.jsonl", m);
    }
    {
        Manifest m;
        m.name = "toy-gen-captions";
        m.task = Task::captioning;
        auto combos = gen_combos(static_cast<int>(kGenCaptionTemplates.size()), rng);
        for (size_t i = 0; i < 300; ++i) {
            const auto& c = combos[i];
            corpus::ImageCaptionSample r;
            r.id = pad_id("gc", i);
            r.image = store.general(c.c, c.s);
            r.caption = fill(kGenCaptionTemplates[static_cast<size_t>(c.t)], gen_vars(c));
            r.language = Language::en;
            r.domain = Domain::general;
            m.records.emplace_back(std::move(r));
        }
        write(dir / "train/captions_general.jsonl", m);
    }

    // ---------------- train + eval: medical VQA ----------------
    auto make_med_vqa = [&store](const MedCombo& c, const std::string& id) -> corpus::VqaSample {
        corpus::VqaSample s;
        s.id = id;
        s.image = store.medical(c.m, c.o, c.f);
        s.domain = Domain::medical;
        switch (c.t % 3) {
            case 0:
                s.question = "what imaging modality is shown?";
                s.answer = kModalities[c.m];
                s.question_kind = QuestionKind::closed;
                s.options = kModalities;
                break;
            case 1:
                s.question = "which organ is affected?";
                s.answer = kOrgans[c.o];
                s.question_kind = QuestionKind::closed;
                s.options = kOrgans;
                break;
            default:
                s.question = "what abnormality is visible?";
                s.answer = kFindings[c.f];
                s.question_kind = QuestionKind::open;
                break;
        }
        return s;
    };
    {
        // pool size matches the desk-scale instruction draw (60), so every
        // grid cell trains on the identical full domain set
        auto combos = med_combos(3, rng);
        Manifest m;
        m.name = "toy-med-vqa";
        m.task = Task::vqa;
        for (size_t i = 0; i < 48; ++i) {
            m.records.emplace_back(make_med_vqa(combos[i], pad_id("mv", i)));
        }
        // multi-turn conversations exercise the history path
        for (size_t i = 0; i < 12; ++i) {
            const auto& c = combos[i + 48];
            corpus::ConversationSample conv;
            conv.id = pad_id("mcv", i);
            conv.image = store.medical(c.m, c.o, c.f);
            conv.turns.push_back({"what imaging modality is shown?", kModalities[c.m]});
            conv.turns.push_back({"which organ is affected?", kOrgans[c.o]});
            m.records.emplace_back(std::move(conv));
        }
        write(dir / "train/vqa_medical.jsonl", m);

        Manifest e;
        e.name = "toy-med-vqa-eval";
        e.task = Task::vqa;
        for (size_t i = 0; i < 32; ++i) {
            e.records.emplace_back(make_med_vqa(combos[i], pad_id("evd", i)));
        }
        write(dir / "eval/vqa_domain.jsonl", e);
    }

    // ---------------- train + eval: general VQA ----------------
    auto make_gen_vqa = [&store](const GenCombo& c, const std::string& id) -> corpus::VqaSample {
        corpus::VqaSample s;
        s.id = id;
        s.image = store.general(c.c, c.s);
        s.domain = Domain::general;
        if (c.t % 2 == 0) {
            s.question = "what color is the shape?";
            s.answer = kColors[c.c];
            s.question_kind = QuestionKind::closed;
            s.options = kColors;
        } else {
            s.question = "what shape is drawn?";
            s.answer = kShapes[c.s];
            s.question_kind = QuestionKind::open;
        }
        return s;
    };
    {
        // keep one combo per (color, shape, question) so the pool carries no
        // exact duplicates; size alone does not reach the question or answer
        auto all = gen_combos(2, rng);
        std::vector<GenCombo> combos;
        std::set<std::tuple<int, int, int>> seen;
        for (const auto& c : all) {
            if (seen.insert({c.c, c.s, c.t % 2}).second) combos.push_back(c);
        }
        Manifest m;
        m.name = "toy-gen-vqa";
        m.task = Task::vqa;
        for (size_t i = 0; i < 72; ++i) {
            m.records.emplace_back(make_gen_vqa(combos[i], pad_id("gv", i)));
        }
        write(dir / "train/vqa_general.jsonl", m);

        Manifest e;
        e.name = "toy-general";
        e.task = Task::vqa;
        for (size_t i = 0; i < 32; ++i) {
            e.records.emplace_back(make_gen_vqa(combos[i], pad_id("evg", i)));
        }
        write(dir / "eval/vqa_general.jsonl", e);
    }

    // ---------------- eval: image classification ----------------
    {
        Manifest m;
        m.name = "toy-med-ic";
        m.task = Task::ic;
        m.classes = kModalities;
        size_t i = 0;
        for (int rep = 0; rep < 8; ++rep) {
            for (int mod = 0; mod < 4; ++mod) {
                corpus::VqaSample s;
                s.id = pad_id("ic", i++);
                s.image = store.medical(mod, rep % 4, (rep + 1) % 4);
                s.question = "which class is shown in the image?";
                s.answer = kModalities[static_cast<size_t>(mod)];
                s.question_kind = QuestionKind::closed;
                s.options = kModalities;
                s.domain = Domain::medical;
                m.records.emplace_back(std::move(s));
            }
        }
        write(dir / "eval/ic.jsonl", m);
    }

    // ---------------- eval: text QA ----------------
    {
        Manifest m;
        m.name = "toy-med-qa-mc";
        m.task = Task::qa;
        for (size_t i = 0; i < 16; ++i) {
            const int f = static_cast<int>(i) % 4;
            corpus::VqaSample s;
            s.id = pad_id("qm", i);
            s.question = "which organ is most associated with a " + kFindings[static_cast<size_t>(f)] + "?";
            s.options = kOrgans;
            s.answer = kOrgans[static_cast<size_t>(f)];  // fixed toy pairing
            s.question_kind = QuestionKind::closed;
            s.domain = Domain::medical;
            m.records.emplace_back(std::move(s));
        }
        write(dir / "eval/qa_mc.jsonl", m);
    }
    {
        Manifest m;
        m.name = "toy-med-qa-ynm";
        m.task = Task::qa;
        const std::vector<std::string> answers = {"yes", "no", "maybe"};
        for (size_t i = 0; i < 16; ++i) {
            corpus::VqaSample s;
            s.id = pad_id("qy", i);
            s.question = "is a " + kFindings[i % 4] + " visible in the " + kOrgans[(i / 4) % 4] + "?";
            s.answer = answers[i % 3];
            s.question_kind = QuestionKind::closed;
            s.domain = Domain::medical;
            m.records.emplace_back(std::move(s));
        }
        write(dir / "eval/qa_ynm.jsonl", m);
    }

    // ---------------- overfit oracle set ----------------
    {
        Manifest m;
        m.name = "toy-overfit-16";
        m.task = Task::captioning;
        // one shared template: the caption is fully determined by what the
        // image encodes, so greedy decode can reproduce it exactly
        auto combos = med_combos(1, rng);
        for (size_t i = 0; i < 16; ++i) {
            const auto& c = combos[i];
            corpus::ImageCaptionSample r;
            r.id = pad_id("ov", i);
            r.image = store.medical(c.m, c.o, c.f);
            r.caption = fill(kMedCaptionTemplates[0], med_vars(c));
            r.language = Language::en;
            r.domain = Domain::medical;
            m.records.emplace_back(std::move(r));
        }
        write(dir / "overfit/captions16.jsonl", m);
    }

    // ---------------- raw multi-QA file ----------------
    {
        std::ofstream f(dir / "raw/multi_qa.jsonl", std::ios::binary);
        auto combos = med_combos(1, rng);
        for (size_t i = 0; i < 10; ++i) {
            const auto& c = combos[i];
            const ImageRef img = store.medical(c.m, c.o, c.f);
            json rec{{"type", "multi_vqa"},
                     {"id", pad_id("raw", i)},
                     {"domain", "medical"},
                     {"image",
                      {{"path", fs::relative(img.path, dir / "raw").generic_string()},
                       {"width", 32},
                       {"height", 32},
                       {"channels", 1}}},
                     {"qa", json::array({
                                {{"question", "what imaging modality is shown?"},
                                 {"answer", kModalities[c.m]},
                                 {"question_kind", "closed"},
                                 {"options", kModalities}},
                                {{"question", "what abnormality is visible?"},
                                 {"answer", kFindings[c.f]},
                                 {"question_kind", "open"}},
                            })}};
            f << rec.dump() << "\n";
        }
    }

    // ---------------- curation fixture (1,000 records) ----------------
    {
        Manifest m;
        m.name = "curation-fixture";
        m.task = Task::qa;
        size_t idx = 0;
        auto next_id = [&idx]() { return pad_id("r", idx++); };

        std::vector<corpus::MultimodalSample> records;
        auto med = med_combos(static_cast<int>(kMedTextTemplates.size()), rng);
        auto zh = med_combos(static_cast<int>(kMedTextTemplatesZh.size()), rng);
        auto gen = gen_combos(static_cast<int>(kGenTextTemplates.size()), rng);

        std::vector<std::string> originals;  // duplicate sources
        auto push_text = [&](std::string text, Language lang, Domain dom, const char* src) {
            corpus::TextRecord r;
            r.id = next_id();
            r.text = std::move(text);
            r.language = lang;
            r.source = src;
            r.domain = dom;
            records.emplace_back(std::move(r));
        };

        // 450 EN + 150 ZH medical, 160 general normal text
        for (size_t i = 0; i < 450; ++i) {
            std::string t = fill(kMedTextTemplates[static_cast<size_t>(med[i].t)], med_vars(med[i]));
            if (originals.size() < 100) originals.push_back(t);
            push_text(std::move(t), Language::en, Domain::medical, "toy-med");
        }
        for (size_t i = 0; i < 150; ++i) {
            push_text(fill(kMedTextTemplatesZh[static_cast<size_t>(zh[i].t)], med_vars(zh[i])),
                      Language::zh, Domain::medical, "toy-med-zh");
        }
        for (size_t i = 0; i < 160; ++i) {
            push_text(fill(kGenTextTemplates[static_cast<size_t>(gen[i].t)], gen_vars(gen[i])),
                      Language::en, Domain::general, "toy-gen");
        }

        // 60 exact duplicates (case/whitespace variants of earlier records)
        for (size_t i = 0; i < 60; ++i) {
            std::string t = "  " + originals[i] + " ";
            for (auto& ch : t) {
                if (ch >= 'a' && ch <= 'z' && rng.below(3) == 0) {
                    ch = static_cast<char>(ch - 'a' + 'A');
                }
            }
            push_text(std::move(t), Language::en, Domain::medical, "toy-med-dup");
        }
        // 40 near duplicates (one appended character)
        for (size_t i = 60; i < 100; ++i) {
            push_text(originals[i] + ".", Language::en, Domain::medical, "toy-med-near");
        }
        // 30 PII-bearing records
        for (size_t i = 0; i < 30; ++i) {
            std::string t = fill(kMedTextTemplates[static_cast<size_t>(med[460 + i].t)],
                                 med_vars(med[460 + i]));
            switch (i % 3) {
                case 0: t += " contact the ward at clerk" + std::to_string(i) + "@example.com"; break;
                case 1: t += " call 13912345678 to reschedule"; break;
                default: t += " patient id 110101199003077832 on file"; break;
            }
            push_text(std::move(t), Language::en, Domain::medical, "toy-med-pii");
        }
        // 20 gibberish records for the perplexity gate
        for (size_t i = 0; i < 20; ++i) {
            std::string t;
            for (int w = 0; w < 8; ++w) {
                if (w) t += ' ';
                const size_t len = 6 + rng.below(5);
                for (size_t k = 0; k < len; ++k) {
                    t += static_cast<char>('a' + rng.below(26));
                }
            }
            push_text(std::move(t), Language::en, Domain::medical, "toy-gibberish");
        }

        // 90 captions: 45 long clean, 25 short, 20 with math notation
        auto cap_combos = med_combos(static_cast<int>(kMedCaptionTemplates.size()), rng);
        for (size_t i = 0; i < 90; ++i) {
            const auto& c = cap_combos[i];
            corpus::ImageCaptionSample r;
            r.id = next_id();
            r.image = store.medical(c.m, c.o, c.f);
            std::string cap = fill(kMedCaptionTemplates[static_cast<size_t>(c.t)], med_vars(c));
            if (i < 45) {
                const std::string detail =
                    " the " + kOrgans[c.o] + " " + kFindings[c.f] + " measures " +
                    std::to_string(8 + i) + " by " + std::to_string(5 + (i % 7)) +
                    " millimeters on the " + kModalities[c.m] + ", with margins of the " +
                    kFindings[c.f] + " well seen against the " + kOrgans[c.o] + " parenchyma.";
                while (cap.size() < 260) cap += detail;
            } else if (i >= 70) {
                cap += " intensity follows I = I_{0} e^{-x}";
            }
            r.caption = std::move(cap);
            r.language = Language::en;
            r.domain = Domain::medical;
            records.emplace_back(std::move(r));
        }

        m.records = std::move(records);
        if (m.records.size() != 1000) {
            throw DataError("curation fixture generator produced " +
                            std::to_string(m.records.size()) + " records, expected 1000");
        }
        write(dir / "curation/raw_1000.jsonl", m);

        const json curation_config = {
            {"filters",
             json::array({{{"name", "exact_dedup"}},
                          {{"name", "near_dedup"}, {"params", {{"threshold", 0.18}}}},
                          {{"name", "length_math"}, {"params", {{"min_chars", 250}}}},
                          {{"name", "pii"}},
                          {{"name", "perplexity"},
                           {"params", {{"tau", 1000.0}, {"scorer", "unigram"}}}}})}};
        std::ofstream cf(dir / "curation/config.json", std::ios::binary);
        cf << curation_config.dump(2) << "\n";
    }

    // ---------------- toy run config ----------------
    {
        const json run_config = {
            {"name", "toy"},
            {"seed", seed},
            {"model", json::object()},  // library defaults
            {"decode_max_new_tokens", 24},
            {"paths",
             {{"text_medical", "train/text_medical.jsonl"},
              {"text_general", "train/text_general.jsonl"},
              {"captions_medical", "train/captions_medical.jsonl"},
              {"captions_general", "train/captions_general.jsonl"},
              {"vqa_medical", "train/vqa_medical.jsonl"},
              {"vqa_general", "train/vqa_general.jsonl"}}},
            {"curation",
             {{"text",
               {{"filters",
                 json::array({{{"name", "exact_dedup"}},
                              {{"name", "near_dedup"}, {"params", {{"threshold", 0.18}}}},
                              {{"name", "pii"}},
                              {{"name", "perplexity"},
                               {"params", {{"tau", 1000.0}, {"scorer", "unigram"}}}}})}}},
              {"caption",
               {{"filters", json::array({{{"name", "exact_dedup"}},
                                         {{"name", "length_math"},
                                          {"params", {{"min_chars", 24}}}}})}}},
              {"vqa", {{"filters", json::array({{{"name", "exact_dedup"}}})}}}}},
            {"stages",
             {{"scale", 0.001},
              {"align_ratio", 1.0},
              {"instruct_ratio", 0.5},
              {"steps_text", 60},
              {"steps_align", 150},
              {"steps_instruct", 400},
              {"batch_size", 16}}},
            {"optim",
             {{"lr_lm", 0.002}, {"lr_adapter", 0.002}, {"warmup_steps", 10}}},
            {"eval",
             json::array({{{"dataset", "eval/vqa_domain.jsonl"}, {"task", "vqa"}},
                          {{"dataset", "eval/vqa_general.jsonl"},
                           {"task", "vqa"},
                           {"label", "toy-general"}},
                          {{"dataset", "eval/ic.jsonl"}, {"task", "ic"}},
                          {{"dataset", "eval/qa_mc.jsonl"},
                           {"task", "qa"},
                           {"protocol", "multiple_choice"}},
                          {{"dataset", "eval/qa_ynm.jsonl"},
                           {"task", "qa"},
                           {"protocol", "yes_no_maybe"}}})}};
        std::ofstream f(dir / "run_config.json", std::ios::binary);
        f << run_config.dump(2) << "\n";
    }
}

}  // namespace vlmkit::fixtures
