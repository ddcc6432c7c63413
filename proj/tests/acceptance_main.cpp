// Acceptance suite: one pass/fail line per criterion, non-zero exit on any
// failure. Tolerances are pinned in code next to each check.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <vector>

#include "test_util.hpp"
#include "toy_models.hpp"
#include "vlmkit/corpus.hpp"
#include "vlmkit/curation.hpp"
#include "vlmkit/eval.hpp"
#include "vlmkit/fixtures.hpp"
#include "vlmkit/mixer.hpp"
#include "vlmkit/model.hpp"
#include "vlmkit/pipeline.hpp"
#include "vlmkit/training.hpp"
#include "vlmkit/util/rng.hpp"

using namespace vlmkit;
using Eigen::MatrixXd;
namespace fs = std::filesystem;

namespace {

struct Harness {
    int failures = 0;

    void run(int number, const std::string& title, double budget_seconds,
             const std::function<void(std::vector<std::string>&)>& body) {
        std::vector<std::string> problems;
        const auto start = std::chrono::steady_clock::now();
        try {
            body(problems);
        } catch (const std::exception& e) {
            problems.push_back(std::string("exception: ") + e.what());
        }
        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (budget_seconds > 0 && elapsed > budget_seconds) {
            char buf[128];
            std::snprintf(buf, sizeof(buf), "runtime %.1fs exceeds budget %.0fs", elapsed,
                          budget_seconds);
            problems.push_back(buf);
        }
        if (problems.empty()) {
            std::printf("PASS  criterion %2d: %s (%.1fs)\n", number, title.c_str(), elapsed);
        } else {
            ++failures;
            std::printf("FAIL  criterion %2d: %s (%.1fs)\n", number, title.c_str(), elapsed);
            for (const auto& p : problems) std::printf("      - %s\n", p.c_str());
        }
        std::fflush(stdout);
    }
};

void expect(std::vector<std::string>& problems, bool ok, const std::string& message) {
    if (!ok) problems.push_back(message);
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

model::ModelConfig grad_check_config() {
    model::ModelConfig cfg;
    cfg.image_size = 16;
    cfg.patch_size = 8;
    cfg.d_vision = 16;
    cfg.d_lm = 16;
    cfg.n_vision_layers = 2;
    cfg.n_lm_layers = 2;
    cfg.n_heads = 2;
    cfg.vocab_size = 300;
    cfg.max_seq_len = 48;
    cfg.lora_rank = 2;
    cfg.lora_alpha = 2.0;
    return cfg;
}

mixer::StagePlan custom_plan(mixer::StageId stage, mixer::LossKind loss,
                             std::vector<std::string> trainable, size_t steps, size_t batch,
                             uint64_t seed) {
    mixer::StagePlan plan;
    plan.stage_id = stage;
    plan.loss_kind = loss;
    plan.trainable = std::move(trainable);
    plan.steps = steps;
    plan.batch_size = batch;
    plan.mix.seed = seed;
    return plan;
}

const fs::path kFixtureDir = "acceptance_fixtures";

}  // namespace

int main() {
    fixtures::generate_fixtures(kFixtureDir, 42);
    Harness h;

    // ------------------------------------------------------------------
    h.run(1, "loss correctness vs position-by-position oracle", 1.0, [](auto& problems) {
        // uniform logits: loss must equal ln(vocab) exactly
        const MatrixXd uniform = MatrixXd::Zero(3, 512);
        const std::vector<int> toks512 = {1, 2, 3};
        const std::vector<uint8_t> mask512 = {0, 1, 1};
        const double lu = training::alignment_loss(uniform, toks512, mask512);
        expect(problems, std::abs(lu - std::log(512.0)) < 1e-6,
               "uniform loss " + fmt(lu) + " != ln(512)");

        // hand-built 6-token sample, independent softmax accumulation
        util::Rng rng(5);
        const int vocab = 16;
        MatrixXd logits(6, vocab);
        for (int r = 0; r < 6; ++r)
            for (int c = 0; c < vocab; ++c) logits(r, c) = 2.0 * rng.gaussian();
        const std::vector<int> tokens = {3, 9, 1, 4, 7, 2};
        const std::vector<uint8_t> mask = {0, 1, 1, 0, 1, 1};
        double expected = 0.0;
        size_t count = 0;
        for (size_t i = 0; i < 6; ++i) {
            if (!mask[i]) continue;
            double denom = 0.0;
            for (int c = 0; c < vocab; ++c) denom += std::exp(logits(static_cast<int>(i) - 1, c));
            expected -= std::log(std::exp(logits(static_cast<int>(i) - 1, tokens[i])) / denom);
            ++count;
        }
        expected /= static_cast<double>(count);
        const double a = training::alignment_loss(logits, tokens, mask);
        const double b = training::instruction_loss(logits, tokens, mask);
        expect(problems, std::abs(a - expected) < 1e-6,
               "alignment loss " + fmt(a) + " vs oracle " + fmt(expected));
        expect(problems, std::abs(b - expected) < 1e-6,
               "instruction loss " + fmt(b) + " vs oracle " + fmt(expected));
    });

    // ------------------------------------------------------------------
    h.run(2, "gradient checks vs central finite differences", 60.0, [](auto& problems) {
        const auto dir = test_util::temp_dir("acc_grad");
        util::save_image(dir / "img.pgm", test_util::test_image(16, 77));
        corpus::ImageCaptionSample cap;
        cap.id = "c";
        cap.image = {(dir / "img.pgm").string(), 16, 16, 1};
        cap.caption = "ct scan";

        // epsilon 2e-5 keeps the oracle's own truncation error (~eps^2)
        // well below the 1e-4 tolerance being verified
        const double fd_eps = 2e-5;
        model::ToyVlm align_model{grad_check_config(), 101};
        training::apply_freeze_schedule(align_model, mixer::StageId::mm_align);
        const double align_err =
            training::grad_check(align_model, mixer::LossKind::alignment, cap, fd_eps);
        expect(problems, align_err < 1e-4,
               "alignment max relative error " + fmt(align_err) + " >= 1e-4");

        model::ToyVlm instr_model{grad_check_config(), 103};
        util::Rng rng(7);
        for (auto& blk : instr_model.vision_blocks) {
            for (model::Linear* lin : {&blk.attn.q, &blk.attn.v}) {
                for (auto* p : {&lin->adapter->a, &lin->adapter->b}) {
                    for (Eigen::Index r = 0; r < p->value.rows(); ++r)
                        for (Eigen::Index c = 0; c < p->value.cols(); ++c)
                            p->value(r, c) = 0.02 * rng.gaussian();
                }
            }
        }
        training::apply_freeze_schedule(instr_model, mixer::StageId::mm_instruct);
        corpus::ConversationSample conv;
        conv.id = "g";
        conv.image = cap.image;
        conv.turns = {{"q1?", "ct"}, {"q2?", "ok"}};
        const double instr_err =
            training::grad_check(instr_model, mixer::LossKind::instruction, conv, fd_eps);
        expect(problems, instr_err < 1e-4,
               "instruction max relative error " + fmt(instr_err) + " >= 1e-4");

        // frozen parameters keep exactly zero gradients
        instr_model.zero_grads();
        training::forward_backward(instr_model, conv, mixer::LossKind::instruction, true);
        for (const auto& ref : instr_model.param_refs()) {
            if (ref.group == "vision.base") {
                expect(problems, ref.param->grad.norm() == 0.0,
                       "frozen parameter " + ref.name + " has non-zero gradient");
            }
        }
    });

    // ------------------------------------------------------------------
    h.run(3, "freeze-schedule fidelity across both multimodal stages", 0.0, [](auto& problems) {
        const auto captions = corpus::load_manifest(kFixtureDir / "train/captions_medical.jsonl");
        const auto vqa = corpus::load_manifest(kFixtureDir / "train/vqa_medical.jsonl");

        model::ToyVlm vlm{model::ModelConfig{}, 11};
        const auto vision0 = vlm.group_checksum("vision.base");
        const auto lora0 = vlm.group_checksum("vision.lora");
        const auto lm0 = vlm.group_checksum("lm");
        const auto proj0 = vlm.group_checksum("projector");

        auto align = custom_plan(mixer::StageId::mm_align, mixer::LossKind::alignment,
                                 {"projector"}, 20, 8, 13);
        auto r1 = training::train_stage(vlm, align, captions.records, {});
        expect(problems, !r1.aborted, "mm_align aborted");
        expect(problems, vlm.group_checksum("vision.base") == vision0,
               "mm_align changed vision.base");
        expect(problems, vlm.group_checksum("vision.lora") == lora0, "mm_align changed LoRA");
        expect(problems, vlm.group_checksum("lm") == lm0, "mm_align changed the LM");
        expect(problems, vlm.group_checksum("projector") != proj0,
               "mm_align did not train the projector");

        const auto proj1 = vlm.group_checksum("projector");
        auto instruct = custom_plan(mixer::StageId::mm_instruct, mixer::LossKind::instruction,
                                    {"vision.lora", "projector", "lm"}, 20, 8, 17);
        auto r2 = training::train_stage(vlm, instruct, vqa.records, {});
        expect(problems, !r2.aborted, "mm_instruct aborted");
        expect(problems, vlm.group_checksum("vision.base") == vision0,
               "mm_instruct changed vision.base");
        expect(problems, vlm.group_checksum("vision.lora") != lora0,
               "mm_instruct did not move the LoRA adapters");
        expect(problems, vlm.group_checksum("projector") != proj1,
               "mm_instruct did not move the projector");
        expect(problems, vlm.group_checksum("lm") != lm0, "mm_instruct did not move the LM");
    });

    // ------------------------------------------------------------------
    h.run(4, "LoRA algebra: neutral init and merge equivalence", 0.0, [](auto& problems) {
        model::ToyVlm vlm{model::ModelConfig{}, 19};
        model::ToyVlm bare{model::ModelConfig{}, 19};
        bare.merge_lora();  // removes the B=0 adapters
        const auto img = test_util::test_image(32, 133);
        const MatrixXd with = vlm.encode_image(img);
        const MatrixXd without = bare.encode_image(img);
        expect(problems, (with - without).cwiseAbs().maxCoeff() == 0.0,
               "B=0 adapters are not bit-neutral");

        util::Rng rng(23);
        for (auto& blk : vlm.vision_blocks) {
            for (model::Linear* lin : {&blk.attn.q, &blk.attn.v}) {
                for (auto* p : {&lin->adapter->a, &lin->adapter->b}) {
                    for (Eigen::Index r = 0; r < p->value.rows(); ++r)
                        for (Eigen::Index c = 0; c < p->value.cols(); ++c)
                            p->value(r, c) = 0.05 * rng.gaussian();
                }
            }
        }
        model::ToyVlm merged = vlm;
        merged.merge_lora();
        double worst = 0.0;
        for (int probe = 0; probe < 20; ++probe) {
            util::Image im = test_util::test_image(32, 0);
            for (auto& px : im.pixels) px = static_cast<uint8_t>(rng.below(256));
            const MatrixXd a = vlm.encode_image(im);
            const MatrixXd b = merged.encode_image(im);
            worst = std::max(worst, (a - b).cwiseAbs().maxCoeff() /
                                        std::max(1e-12, a.cwiseAbs().maxCoeff()));
        }
        expect(problems, worst < 1e-5,
               "merged forward deviates by " + fmt(worst) + " (relative)");
    });

    // ------------------------------------------------------------------
    h.run(5, "overfit oracle: 200 steps on 16 caption fixtures", 300.0, [](auto& problems) {
        const auto data = corpus::load_manifest(kFixtureDir / "overfit/captions16.jsonl");
        model::ToyVlm vlm{model::ModelConfig{}, 29};

        double initial = 0.0;
        for (const auto& s : data.records) {
            initial += training::forward_backward(vlm, s, mixer::LossKind::alignment, false);
        }
        initial /= static_cast<double>(data.records.size());
        expect(problems, std::abs(initial - std::log(512.0)) < 0.5,
               "initial loss " + fmt(initial) + " not near ln(512) = " + fmt(std::log(512.0)));

        auto plan = custom_plan(mixer::StageId::mm_instruct, mixer::LossKind::alignment,
                                {"vision.lora", "projector", "lm"}, 200, 16, 31);
        training::TrainOptions opts;
        opts.optim.lr_lm = 5e-3;
        opts.optim.lr_adapter = 5e-3;
        const auto result = training::train_stage(vlm, plan, data.records, opts);
        expect(problems, !result.aborted, "overfit run aborted");

        double final_loss = 0.0;
        for (const auto& s : data.records) {
            final_loss += training::forward_backward(vlm, s, mixer::LossKind::alignment, false);
        }
        final_loss /= static_cast<double>(data.records.size());
        expect(problems, final_loss < 0.1,
               "mean alignment loss " + fmt(final_loss) + " did not drop below 0.1");

        int exact = 0;
        for (const auto& s : data.records) {
            const auto* cap = std::get_if<corpus::ImageCaptionSample>(&s);
            const auto img = util::load_image(cap->image.path);
            const auto out = vlm.generate(img, "", {96});
            if (out.text == cap->caption) ++exact;
        }
        expect(problems, exact >= 14,
               "greedy decode reproduced only " + std::to_string(exact) + "/16 captions");
    });

    // ------------------------------------------------------------------
    h.run(6, "mixing arithmetic at scale 1 and desk scale", 0.0, [](auto& problems) {
        mixer::StageConfig full;
        full.scale = 1.0;
        const auto plans = mixer::build_stage_plans(full);
        expect(problems, plans[1].domain_count == 50000, "stage-2 medical != 50,000");
        expect(problems, plans[1].planned_general() == 200000, "stage-2 general != 200,000");
        expect(problems, plans[1].planned_total() == 250000, "stage-2 total != 250,000");
        expect(problems, plans[3].domain_count == 60000, "instruct domain != 60,000");
        expect(problems, plans[3].mix.general_parts == 0.5, "instruct ratio != 1:0.5");
        expect(problems, plans[3].planned_total() == 90000, "instruct total != 90,000");

        mixer::StageConfig desk;  // default 1/1000
        const auto small = mixer::build_stage_plans(desk);
        expect(problems, small[1].domain_count == 50 && small[1].planned_general() == 200,
               "desk-scale stage-2 composition wrong");
        expect(problems, small[3].planned_total() == 90, "desk-scale instruct total wrong");

        // composition exactness across the grid ratios
        for (const double ratio : {0.0, 0.2, 0.5, 1.0}) {
            const size_t draw = mixer::general_draw(60, ratio);
            const size_t expected = static_cast<size_t>(std::floor(60.0 * ratio + 0.5));
            expect(problems, draw == expected, "round formula mismatch at ratio " + fmt(ratio));
        }

        // seeded determinism across repeated runs, byte level
        const auto domain = corpus::load_manifest(kFixtureDir / "train/vqa_medical.jsonl");
        const auto general = corpus::load_manifest(kFixtureDir / "train/vqa_general.jsonl");
        const auto dir = test_util::temp_dir("acc_mix");
        corpus::write_manifest(dir / "a.jsonl",
                               mixer::mix_datasets(domain, general, {0.5, 99, true}));
        corpus::write_manifest(dir / "b.jsonl",
                               mixer::mix_datasets(domain, general, {0.5, 99, true}));
        expect(problems,
               test_util::read_file(dir / "a.jsonl") == test_util::read_file(dir / "b.jsonl"),
               "same-seed mixes are not byte-identical");
    });

    // ------------------------------------------------------------------
    h.run(7, "curation oracles", 0.0, [](auto& problems) {
        // exact dedup: idempotent + order preserving on a 500-record fuzz corpus
        util::Rng rng(41);
        curation::Records fuzz;
        for (int i = 0; i < 500; ++i) {
            corpus::TextRecord r;
            r.id = "f" + std::to_string(i);
            r.text = "note " + std::to_string(rng.below(150));
            fuzz.emplace_back(std::move(r));
        }
        const auto once = curation::exact_dedup(fuzz);
        const auto twice = curation::exact_dedup(once.kept);
        expect(problems, twice.entry.rejected_count == 0, "exact_dedup is not idempotent");
        size_t last = 0;
        bool ordered = true;
        for (const auto& r : once.kept) {
            const size_t n = std::stoul(corpus::sample_id(r).substr(1));
            ordered = ordered && n >= last;
            last = n;
        }
        expect(problems, ordered, "exact_dedup does not preserve input order");

        // near dedup equals the quadratic oracle on inputs up to 100 records
        curation::TrigramHashEmbedder embedder;
        for (int trial = 0; trial < 3; ++trial) {
            curation::Records records;
            const size_t n = 40 + rng.below(61);
            for (size_t i = 0; i < n; ++i) {
                corpus::TextRecord r;
                r.id = "n" + std::to_string(i);
                r.text = std::string("base sentence about the ") +
                         (rng.below(2) ? "lung" : "liver");
                for (size_t k = 0; k < rng.below(5); ++k) {
                    r.text += std::string(1, static_cast<char>('a' + rng.below(26)));
                }
                records.emplace_back(std::move(r));
            }
            const double threshold = 0.1 + 0.2 * trial;
            const auto got = curation::near_dedup(records, embedder, threshold);
            curation::Records oracle_kept;
            for (const auto& r : records) {
                const Eigen::VectorXd e = embedder.embed(corpus::primary_text(r));
                bool drop = false;
                for (const auto& k : oracle_kept) {
                    drop = drop ||
                           (e - embedder.embed(corpus::primary_text(k))).norm() < threshold;
                }
                if (!drop) oracle_kept.push_back(r);
            }
            expect(problems, got.kept.size() == oracle_kept.size(),
                   "near_dedup disagrees with the brute-force oracle");
        }

        // 250-character boundary: 249 rejected, 250 kept
        auto boundary_record = [](size_t chars) {
            corpus::ImageCaptionSample c;
            c.id = "b";
            c.image = {"unused.pgm", 32, 32, 1};
            c.caption = std::string(chars, 'y');
            return curation::Records{c};
        };
        expect(problems,
               curation::length_math_filter(boundary_record(249), 250).kept.empty(),
               "249-char caption was kept");
        expect(problems,
               curation::length_math_filter(boundary_record(250), 250).kept.size() == 1,
               "250-char caption was rejected");

        // report conservation on the bundled fixture through the full pipeline
        const auto raw = corpus::load_manifest(kFixtureDir / "curation/raw_1000.jsonl");
        const auto config =
            curation::PipelineConfig::load(kFixtureDir / "curation/config.json");
        const auto [curated, report] = curation::run_pipeline(config, raw);
        expect(problems, report.conserves(), "filter report does not conserve counts");

        // the composed pipeline equals sequential filter-by-filter application
        // with the same configured parameters
        auto sequential = raw.records;
        for (const auto& f : config.filters) {
            if (f.name == "exact_dedup") {
                sequential = curation::exact_dedup(sequential).kept;
            } else if (f.name == "near_dedup") {
                sequential = curation::near_dedup(sequential, embedder,
                                                  f.params.value("threshold", 0.35))
                                 .kept;
            } else if (f.name == "length_math") {
                sequential =
                    curation::length_math_filter(sequential, f.params.value("min_chars", size_t{250}))
                        .kept;
            } else if (f.name == "pii") {
                sequential =
                    curation::pii_filter(sequential, curation::PiiPatterns::default_set()).kept;
            } else if (f.name == "perplexity") {
                std::vector<std::string> texts;
                for (const auto& r : sequential) texts.push_back(corpus::primary_text(r));
                const auto scorer = curation::UnigramScorer::fit(texts);
                sequential =
                    curation::perplexity_filter(sequential, scorer, f.params.value("tau", 1000.0))
                        .kept;
            }
        }
        expect(problems, curated.records.size() == sequential.size(),
               "pipeline accepted " + std::to_string(curated.records.size()) +
                   ", sequential oracle accepted " + std::to_string(sequential.size()));
        bool every_filter_fired = true;
        for (const auto& entry : report.filters) {
            every_filter_fired = every_filter_fired && entry.rejected_count > 0;
        }
        expect(problems, every_filter_fired,
               "a configured filter rejected nothing on the planted fixture");
    });

    // ------------------------------------------------------------------
    h.run(8, "metric oracles", 0.0, [](auto& problems) {
        util::Rng rng(53);
        const std::vector<std::string> vocab = {"lung", "ct", "shows", "a", "lesion", "the"};
        auto random_words = [&rng, &vocab]() {
            std::string s;
            const size_t n = rng.below(6);
            for (size_t i = 0; i < n; ++i) {
                if (i) s += ' ';
                s += vocab[rng.below(vocab.size())];
            }
            return s;
        };
        auto bleu_oracle = [](const std::string& cand, const std::string& ref) {
            const auto c = eval::tokenize(cand);
            const auto r = eval::tokenize(ref);
            if (c.empty()) return 0.0;
            std::vector<bool> used(r.size(), false);
            double clipped = 0.0;
            for (const auto& ct : c) {
                for (size_t j = 0; j < r.size(); ++j) {
                    if (!used[j] && r[j] == ct) {
                        used[j] = true;
                        clipped += 1.0;
                        break;
                    }
                }
            }
            const double p = clipped / static_cast<double>(c.size());
            const double bp =
                c.size() >= r.size()
                    ? 1.0
                    : std::exp(1.0 - static_cast<double>(r.size()) / static_cast<double>(c.size()));
            return p * bp;
        };
        bool bleu_ok = true;
        for (int i = 0; i < 1000; ++i) {
            const auto cand = random_words();
            const auto ref = random_words();
            bleu_ok = bleu_ok && std::abs(eval::bleu1(cand, ref) - bleu_oracle(cand, ref)) < 1e-12;
        }
        expect(problems, bleu_ok, "bleu1 disagrees with the brute-force oracle");

        // macro AUC vs pairwise-counting oracle with tie value 0.5, n <= 50
        auto auc_pairwise = [](const std::vector<double>& scores,
                               const std::vector<bool>& positive) {
            double wins = 0.0;
            size_t pairs = 0;
            for (size_t i = 0; i < scores.size(); ++i) {
                if (!positive[i]) continue;
                for (size_t j = 0; j < scores.size(); ++j) {
                    if (positive[j]) continue;
                    ++pairs;
                    if (scores[i] > scores[j]) wins += 1.0;
                    else if (scores[i] == scores[j]) wins += 0.5;
                }
            }
            return wins / static_cast<double>(pairs);
        };
        bool auc_ok = true;
        for (int trial = 0; trial < 10; ++trial) {
            const size_t n = 2 + rng.below(49);
            const int k = 2 + static_cast<int>(rng.below(3));
            MatrixXd scores(n, k);
            std::vector<int> gold(n);
            for (size_t i = 0; i < n; ++i) {
                gold[i] = static_cast<int>(rng.below(static_cast<uint64_t>(k)));
                for (int c = 0; c < k; ++c) {
                    scores(static_cast<Eigen::Index>(i), c) =
                        static_cast<double>(rng.below(4)) / 3.0;
                }
            }
            bool degenerate = true;
            for (size_t i = 1; i < n; ++i) degenerate = degenerate && gold[i] == gold[0];
            if (degenerate) gold[0] = (gold[0] + 1) % k;

            double oracle_total = 0.0;
            size_t used = 0;
            for (int c = 0; c < k; ++c) {
                std::vector<double> col;
                std::vector<bool> pos;
                size_t n_pos = 0;
                for (size_t i = 0; i < n; ++i) {
                    col.push_back(scores(static_cast<Eigen::Index>(i), c));
                    pos.push_back(gold[i] == c);
                    n_pos += gold[i] == c ? 1 : 0;
                }
                if (n_pos == 0 || n_pos == n) continue;
                oracle_total += auc_pairwise(col, pos);
                ++used;
            }
            auc_ok = auc_ok && std::abs(eval::macro_auc(scores, gold) -
                                        oracle_total / static_cast<double>(used)) < 1e-12;
        }
        expect(problems, auc_ok, "macro_auc disagrees with the pairwise oracle");

        // degenerate constant classifier reproduces the 0.500 pattern
        const auto dir = test_util::temp_dir("acc_ic");
        corpus::Manifest ic;
        ic.name = "acc-ic";
        ic.task = corpus::Task::ic;
        ic.classes = {"alpha", "beta", "gamma"};
        for (int i = 0; i < 9; ++i) {
            util::save_image(dir / ("i" + std::to_string(i) + ".pgm"),
                             test_util::test_image(16, static_cast<uint8_t>(20 * i + 5)));
            corpus::VqaSample s;
            s.id = "s" + std::to_string(i);
            s.image = corpus::ImageRef{(dir / ("i" + std::to_string(i) + ".pgm")).string(), 16, 16, 1};
            s.question = "which class is shown in the image?";
            s.answer = ic.classes[static_cast<size_t>(i) % 3];
            s.question_kind = corpus::QuestionKind::closed;
            s.options = ic.classes;
            ic.records.emplace_back(std::move(s));
        }
        test_util::ConstantModel junk("totally unrelated words");
        const auto degenerate_report = eval::evaluate_ic(junk, ic);
        expect(problems,
               std::abs(degenerate_report.metrics.at("macro_auc") - 0.5) <= 1e-3,
               "constant classifier macro-AUC " +
                   fmt(degenerate_report.metrics.at("macro_auc")) + " != 0.500 +- 0.001");

        test_util::ConstantModel alpha("alpha");
        const auto constant_report = eval::evaluate_ic(alpha, ic);
        expect(problems,
               std::abs(constant_report.metrics.at("macro_f1") - 1.0 / 6.0) <= 1e-6,
               "balanced constant predictor macro-F1 " +
                   fmt(constant_report.metrics.at("macro_f1")) + " != 1/6");
    });

    // ------------------------------------------------------------------
    h.run(9, "end-to-end mixing-ratio grid", 1800.0, [](auto& problems) {
        pipeline::RunConfig config = pipeline::RunConfig::load(kFixtureDir / "run_config.json");
        pipeline::Options options;
        options.out_root = fs::path("acceptance_runs");
        fs::remove_all(options.out_root);  // fresh run, no resume shortcuts
        const int rc = pipeline::cmd_grid(config, options);
        expect(problems, rc == 0, "cmd_grid exited with code " + std::to_string(rc));

        std::ifstream f(options.out_root / (config.name + "-grid") / "reports/grid.json");
        expect(problems, f.good(), "grid report missing");
        if (!f.good()) return;
        nlohmann::json grid;
        f >> grid;
        const auto& rows = grid.at("rows");
        expect(problems, rows.size() == 8, "grid has " + std::to_string(rows.size()) + " cells");

        double e1v1_general = -1, e1v1_domain = -1, e2v4_general = -1, e2v4_domain = -1;
        for (const auto& row : rows) {
            expect(problems, row.at("status") == "done",
                   "cell " + row.at("cell").get<std::string>() + " failed");
            if (row.at("cell") == "E1-V1") {
                e1v1_general = row.value("general_ave", -1.0);
                e1v1_domain = row.value("domain_ave", -1.0);
            }
            if (row.at("cell") == "E2-V4") {
                e2v4_general = row.value("general_ave", -1.0);
                e2v4_domain = row.value("domain_ave", -1.0);
            }
        }
        expect(problems, e1v1_general >= 0 && e2v4_general >= 0, "grid averages missing");
        expect(problems, e1v1_general < e2v4_general,
               "toy-general not strictly ordered: E1-V1 " + fmt(e1v1_general) + " vs E2-V4 " +
                   fmt(e2v4_general));
        const double rel_gap = std::abs(e1v1_domain - e2v4_domain) /
                               std::max({e1v1_domain, e2v4_domain, 1e-9});
        expect(problems, rel_gap <= 0.20,
               "domain scores differ by " + fmt(100 * rel_gap) + "% (E1-V1 " + fmt(e1v1_domain) +
                   ", E2-V4 " + fmt(e2v4_domain) + ")");
    });

    // ------------------------------------------------------------------
    h.run(10, "evaluation harness sanity: oracle and noise models", 0.0, [](auto& problems) {
        const auto vqa = corpus::load_manifest(kFixtureDir / "eval/vqa_domain.jsonl");
        test_util::OracleModel oracle(vqa);
        const auto vr = eval::evaluate_vqa(oracle, vqa);
        for (const auto& [k, v] : vr.metrics) {
            expect(problems, std::abs(v - 1.0) < 1e-9,
                   "oracle VQA metric " + k + " = " + fmt(v) + " != 1.0");
        }

        const auto ic = corpus::load_manifest(kFixtureDir / "eval/ic.jsonl");
        test_util::OracleModel ic_oracle(ic);
        const auto icr = eval::evaluate_ic(ic_oracle, ic);
        for (const auto& [k, v] : icr.metrics) {
            expect(problems, std::abs(v - 1.0) < 1e-9,
                   "oracle IC metric " + k + " = " + fmt(v) + " != 1.0");
        }

        const auto mc = corpus::load_manifest(kFixtureDir / "eval/qa_mc.jsonl");
        test_util::OracleModel mc_oracle(mc);
        const auto mcr = eval::evaluate_qa(mc_oracle, mc, eval::QaProtocol::multiple_choice);
        expect(problems, std::abs(mcr.metrics.at("accuracy") - 1.0) < 1e-9,
               "oracle multiple-choice accuracy != 1.0");

        const auto ynm = corpus::load_manifest(kFixtureDir / "eval/qa_ynm.jsonl");
        test_util::OracleModel ynm_oracle(ynm);
        const auto ynmr = eval::evaluate_qa(ynm_oracle, ynm, eval::QaProtocol::yes_no_maybe);
        expect(problems, std::abs(ynmr.metrics.at("accuracy") - 1.0) < 1e-9,
               "oracle yes/no/maybe accuracy != 1.0");

        test_util::NoiseModel noise;
        const auto nr = eval::evaluate_vqa(noise, vqa);
        expect(problems, nr.metrics.at("O-A") <= 0.1,
               "noise model O-A " + fmt(nr.metrics.at("O-A")) + " > 0.1");
    });

    std::printf("%s: %d criterion(s) failed\n", h.failures == 0 ? "ACCEPTANCE PASS" : "ACCEPTANCE FAIL",
                h.failures);
    return h.failures == 0 ? 0 : 1;
}
