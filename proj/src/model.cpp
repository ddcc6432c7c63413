#include "vlmkit/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "vlmkit/error.hpp"
#include "vlmkit/util/digest.hpp"
#include "vlmkit/util/rng.hpp"

namespace vlmkit::model {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {
constexpr double kLnEps = 1e-5;
constexpr double kNegInf = -1e30;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
}  // namespace

void check_finite(const MatrixXd& m, const std::string& where) {
    if (!m.allFinite()) throw NumericError("non-finite activation in " + where);
}

// ---------------------------------------------------------------------------
// config / tokenizer
// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
    if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0) {
        throw ConfigError("image_size must be a positive multiple of patch_size");
    }
    if (d_vision % n_heads != 0 || d_lm % n_heads != 0) {
        throw ConfigError("d_vision and d_lm must be divisible by n_heads");
    }
    if (vocab_size < 260) throw ConfigError("vocab_size must cover bytes plus special tokens");
    if (max_seq_len < n_visual_tokens() + 2) {
        throw ConfigError("max_seq_len must exceed the visual token count");
    }
    if (lora_rank < 1) throw ConfigError("lora_rank must be >= 1");
}

json ModelConfig::to_json() const {
    return json{{"image_size", image_size},
                {"patch_size", patch_size},
                {"d_vision", d_vision},
                {"n_vision_layers", n_vision_layers},
                {"d_lm", d_lm},
                {"n_lm_layers", n_lm_layers},
                {"n_heads", n_heads},
                {"vocab_size", vocab_size},
                {"max_seq_len", max_seq_len},
                {"lora_rank", lora_rank},
                {"lora_alpha", lora_alpha},
                {"projector_bias", projector_bias}};
}

ModelConfig ModelConfig::from_json(const json& j) {
    ModelConfig c;
    c.image_size = j.value("image_size", c.image_size);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.d_vision = j.value("d_vision", c.d_vision);
    c.n_vision_layers = j.value("n_vision_layers", c.n_vision_layers);
    c.d_lm = j.value("d_lm", c.d_lm);
    c.n_lm_layers = j.value("n_lm_layers", c.n_lm_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
    c.lora_rank = j.value("lora_rank", c.lora_rank);
    c.lora_alpha = j.value("lora_alpha", c.lora_alpha);
    c.projector_bias = j.value("projector_bias", c.projector_bias);
    c.validate();
    return c;
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (const char c : text) ids.push_back(static_cast<unsigned char>(c));
    return ids;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
    std::string out;
    out.reserve(ids.size());
    for (const int id : ids) {
        if (id >= 0 && id < 256) out.push_back(static_cast<char>(id));
    }
    return out;
}

// ---------------------------------------------------------------------------
// layers
// ---------------------------------------------------------------------------

MatrixXd Linear::forward(const MatrixXd& x, LinearCache* cache) const {
    MatrixXd y = x * w.value.transpose();
    if (has_bias) y.rowwise() += b.value.row(0);
    MatrixXd u;
    if (adapter) {
        u = x * adapter->a.value.transpose();
        y += adapter->scaling() * (u * adapter->b.value.transpose());
    }
    if (cache) {
        cache->x = x;
        if (adapter) cache->u = std::move(u);
    }
    return y;
}

MatrixXd Linear::backward(const LinearCache& cache, const MatrixXd& dy) {
    w.accumulate(dy.transpose() * cache.x);
    if (has_bias) b.accumulate(dy.colwise().sum());
    MatrixXd dx = dy * w.value;
    if (adapter) {
        const double s = adapter->scaling();
        adapter->b.accumulate(s * (dy.transpose() * cache.u));
        const MatrixXd du = s * (dy * adapter->b.value);
        adapter->a.accumulate(du.transpose() * cache.x);
        dx += du * adapter->a.value;
    }
    return dx;
}

void Linear::merge_adapter() {
    if (!adapter) return;
    w.value += adapter->delta();
    adapter.reset();
}

MatrixXd LayerNorm::forward(const MatrixXd& x, LayerNormCache* cache) const {
    const Eigen::VectorXd mu = x.rowwise().mean();
    MatrixXd xc = x.colwise() - mu;
    const Eigen::VectorXd var = xc.array().square().rowwise().mean();
    const Eigen::VectorXd inv_std = (var.array() + kLnEps).rsqrt();
    MatrixXd xhat = xc.array().colwise() * inv_std.array();
    MatrixXd y = (xhat.array().rowwise() * gamma.value.row(0).array()).rowwise() +
                 beta.value.row(0).array();
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->inv_std = inv_std;
        return y;
    }
    return y;
}

MatrixXd LayerNorm::backward(const LayerNormCache& cache, const MatrixXd& dy) {
    gamma.accumulate((dy.array() * cache.xhat.array()).colwise().sum());
    beta.accumulate(dy.colwise().sum());

    const MatrixXd dxhat = dy.array().rowwise() * gamma.value.row(0).array();
    const Eigen::VectorXd mean_dxhat = dxhat.rowwise().mean();
    const Eigen::VectorXd mean_dxhat_xhat = (dxhat.array() * cache.xhat.array()).rowwise().mean();
    MatrixXd dx = dxhat;
    dx.colwise() -= mean_dxhat;
    dx -= (cache.xhat.array().colwise() * mean_dxhat_xhat.array()).matrix();
    dx = (dx.array().colwise() * cache.inv_std.array()).matrix();
    return dx;
}

MatrixXd Attention::forward(const MatrixXd& x, AttentionCache* cache) const {
    const auto T = x.rows();
    const int d = static_cast<int>(x.cols());
    AttentionCache local;
    AttentionCache* c = cache ? cache : &local;

    c->qp = q.forward(x, &c->q);
    c->kp = k.forward(x, &c->k);
    c->vp = v.forward(x, &c->v);

    const int hs = d / n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hs));
    MatrixXd concat(T, d);
    c->att.assign(static_cast<size_t>(n_heads), MatrixXd());
    for (int h = 0; h < n_heads; ++h) {
        const auto qh = c->qp.middleCols(h * hs, hs);
        const auto kh = c->kp.middleCols(h * hs, hs);
        const auto vh = c->vp.middleCols(h * hs, hs);
        MatrixXd scores = scale * (qh * kh.transpose());
        if (causal) {
            for (Eigen::Index i = 0; i < T; ++i) {
                for (Eigen::Index j = i + 1; j < T; ++j) scores(i, j) = kNegInf;
            }
        }
        // numerically stable row softmax
        const Eigen::VectorXd row_max = scores.rowwise().maxCoeff();
        MatrixXd att = (scores.colwise() - row_max).array().exp();
        const Eigen::VectorXd row_sum = att.rowwise().sum();
        att = att.array().colwise() / row_sum.array();
        concat.middleCols(h * hs, hs) = att * vh;
        c->att[static_cast<size_t>(h)] = std::move(att);
    }
    return o.forward(concat, &c->o);
}

MatrixXd Attention::backward(const AttentionCache& cache, const MatrixXd& dy) {
    const auto T = cache.qp.rows();
    const int d = static_cast<int>(cache.qp.cols());
    const int hs = d / n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hs));

    const MatrixXd dconcat = o.backward(cache.o, dy);
    MatrixXd dqp = MatrixXd::Zero(T, d), dkp = MatrixXd::Zero(T, d), dvp = MatrixXd::Zero(T, d);
    for (int h = 0; h < n_heads; ++h) {
        const auto dyh = dconcat.middleCols(h * hs, hs);
        const auto qh = cache.qp.middleCols(h * hs, hs);
        const auto kh = cache.kp.middleCols(h * hs, hs);
        const auto vh = cache.vp.middleCols(h * hs, hs);
        const MatrixXd& att = cache.att[static_cast<size_t>(h)];

        const MatrixXd datt = dyh * vh.transpose();
        dvp.middleCols(h * hs, hs) = att.transpose() * dyh;
        const Eigen::VectorXd row_dot = (datt.array() * att.array()).rowwise().sum();
        const MatrixXd dscores =
            att.array() * (datt.array().colwise() - row_dot.array()) * scale;
        dqp.middleCols(h * hs, hs) = dscores * kh;
        dkp.middleCols(h * hs, hs) = dscores.transpose() * qh;
    }
    MatrixXd dx = q.backward(cache.q, dqp);
    dx += k.backward(cache.k, dkp);
    dx += v.backward(cache.v, dvp);
    return dx;
}

namespace {

MatrixXd gelu(const MatrixXd& x) {
    return 0.5 * x.array() *
           (1.0 + ((kGeluC * (x.array() + 0.044715 * x.array().cube())).tanh()));
}

MatrixXd gelu_grad(const MatrixXd& x) {
    const auto inner = kGeluC * (x.array() + 0.044715 * x.array().cube());
    const auto t = inner.tanh();
    const auto dinner = kGeluC * (1.0 + 3.0 * 0.044715 * x.array().square());
    return (0.5 * (1.0 + t) + 0.5 * x.array() * (1.0 - t.square()) * dinner).matrix();
}

}  // namespace

MatrixXd Mlp::forward(const MatrixXd& x, MlpCache* cache) const {
    MlpCache local;
    MlpCache* c = cache ? cache : &local;
    c->pre_act = fc1.forward(x, &c->fc1);
    const MatrixXd act = gelu(c->pre_act);
    return fc2.forward(act, &c->fc2);
}

MatrixXd Mlp::backward(const MlpCache& cache, const MatrixXd& dy) {
    const MatrixXd dact = fc2.backward(cache.fc2, dy);
    const MatrixXd dpre = dact.array() * gelu_grad(cache.pre_act).array();
    return fc1.backward(cache.fc1, dpre);
}

MatrixXd Block::forward(const MatrixXd& x, BlockCache* cache) const {
    BlockCache local;
    BlockCache* c = cache ? cache : &local;
    c->x_in = x;
    const MatrixXd a = x + attn.forward(ln1.forward(x, &c->ln1), &c->attn);
    c->x_mid = a;
    return a + mlp.forward(ln2.forward(a, &c->ln2), &c->mlp);
}

MatrixXd Block::backward(const BlockCache& cache, const MatrixXd& dy) {
    const MatrixXd dln2_out = mlp.backward(cache.mlp, dy);
    MatrixXd da = dy + ln2.backward(cache.ln2, dln2_out);
    const MatrixXd dln1_out = attn.backward(cache.attn, da);
    return da + ln1.backward(cache.ln1, dln1_out);
}

// ---------------------------------------------------------------------------
// assembled sequences
// ---------------------------------------------------------------------------

size_t AssembledSequence::supervised_count() const {
    size_t n = 0;
    for (const uint8_t m : mask) n += m;
    return n;
}

// ---------------------------------------------------------------------------
// model construction
// ---------------------------------------------------------------------------

namespace {

Linear make_linear(int out, int in, bool bias = true) {
    Linear l;
    l.w.resize(out, in);
    l.b.resize(1, out);
    l.has_bias = bias;
    return l;
}

LayerNorm make_ln(int d) {
    LayerNorm ln;
    ln.gamma.resize(1, d);
    ln.beta.resize(1, d);
    ln.gamma.value.setOnes();
    return ln;
}

Block make_block(int d, int n_heads, bool causal) {
    Block blk;
    blk.ln1 = make_ln(d);
    blk.ln2 = make_ln(d);
    blk.attn.q = make_linear(d, d);
    blk.attn.k = make_linear(d, d);
    blk.attn.v = make_linear(d, d);
    blk.attn.o = make_linear(d, d);
    blk.attn.n_heads = n_heads;
    blk.attn.causal = causal;
    blk.mlp.fc1 = make_linear(4 * d, d);
    blk.mlp.fc2 = make_linear(d, 4 * d);
    return blk;
}

LoraAdapter make_adapter(int out, int in, int rank, double alpha) {
    LoraAdapter ad;
    ad.rank = rank;
    ad.alpha = alpha;
    ad.a.resize(rank, in);
    ad.b.resize(out, rank);
    return ad;
}

bool ends_with(const std::string& s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

ToyVlm::ToyVlm(const ModelConfig& cfg, uint64_t seed) : config(cfg) {
    config.validate();

    patch_proj = make_linear(config.d_vision, config.patch_dim());
    vision_pos.resize(config.n_visual_tokens(), config.d_vision);
    for (int i = 0; i < config.n_vision_layers; ++i) {
        Block blk = make_block(config.d_vision, config.n_heads, /*causal=*/false);
        // adapter targets: every vision attention block's query and value maps
        blk.attn.q.adapter =
            make_adapter(config.d_vision, config.d_vision, config.lora_rank, config.lora_alpha);
        blk.attn.v.adapter =
            make_adapter(config.d_vision, config.d_vision, config.lora_rank, config.lora_alpha);
        vision_blocks.push_back(std::move(blk));
    }
    vision_ln_f = make_ln(config.d_vision);

    projector = make_linear(config.d_lm, config.d_vision, config.projector_bias);

    tok_emb.resize(config.vocab_size, config.d_lm);
    lm_pos.resize(config.max_seq_len, config.d_lm);
    for (int i = 0; i < config.n_lm_layers; ++i) {
        lm_blocks.push_back(make_block(config.d_lm, config.n_heads, /*causal=*/true));
    }
    lm_ln_f = make_ln(config.d_lm);
    head = make_linear(config.vocab_size, config.d_lm, /*bias=*/false);

    util::Rng rng(util::derive_seed(seed, "model.init"));
    for (const auto& ref : param_refs()) {
        Param& p = *ref.param;
        if (ends_with(ref.name, ".gamma")) {
            p.value.setOnes();
        } else if (ends_with(ref.name, ".beta") || ends_with(ref.name, ".b") ||
                   ends_with(ref.name, "lora.b")) {
            p.value.setZero();
        } else {
            double std_dev = 0.02;
            if (ends_with(ref.name, ".pos") || ref.name == "vision.pos") std_dev = 0.01;
            if (ends_with(ref.name, "lora.a")) std_dev = 0.01;
            for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
                for (Eigen::Index c2 = 0; c2 < p.value.cols(); ++c2) {
                    p.value(r, c2) = std_dev * rng.gaussian();
                }
            }
        }
    }
}

std::vector<ParamRef> ToyVlm::param_refs() {
    std::vector<ParamRef> refs;
    auto add_linear = [&refs](const std::string& group, const std::string& prefix, Linear& l) {
        refs.push_back({group, prefix + ".w", &l.w});
        if (l.has_bias) refs.push_back({group, prefix + ".b", &l.b});
    };
    auto add_ln = [&refs](const std::string& group, const std::string& prefix, LayerNorm& ln) {
        refs.push_back({group, prefix + ".gamma", &ln.gamma});
        refs.push_back({group, prefix + ".beta", &ln.beta});
    };
    auto add_block = [&](const std::string& group, const std::string& prefix, Block& blk) {
        add_ln(group, prefix + ".ln1", blk.ln1);
        add_linear(group, prefix + ".attn.q", blk.attn.q);
        add_linear(group, prefix + ".attn.k", blk.attn.k);
        add_linear(group, prefix + ".attn.v", blk.attn.v);
        add_linear(group, prefix + ".attn.o", blk.attn.o);
        add_ln(group, prefix + ".ln2", blk.ln2);
        add_linear(group, prefix + ".mlp.fc1", blk.mlp.fc1);
        add_linear(group, prefix + ".mlp.fc2", blk.mlp.fc2);
    };

    add_linear("vision.base", "vision.patch_proj", patch_proj);
    refs.push_back({"vision.base", "vision.pos", &vision_pos});
    for (size_t i = 0; i < vision_blocks.size(); ++i) {
        add_block("vision.base", "vision.block" + std::to_string(i), vision_blocks[i]);
    }
    add_ln("vision.base", "vision.ln_f", vision_ln_f);

    for (size_t i = 0; i < vision_blocks.size(); ++i) {
        const std::string prefix = "vision.block" + std::to_string(i) + ".attn.";
        if (vision_blocks[i].attn.q.adapter) {
            refs.push_back({"vision.lora", prefix + "q.lora.a", &vision_blocks[i].attn.q.adapter->a});
            refs.push_back({"vision.lora", prefix + "q.lora.b", &vision_blocks[i].attn.q.adapter->b});
        }
        if (vision_blocks[i].attn.v.adapter) {
            refs.push_back({"vision.lora", prefix + "v.lora.a", &vision_blocks[i].attn.v.adapter->a});
            refs.push_back({"vision.lora", prefix + "v.lora.b", &vision_blocks[i].attn.v.adapter->b});
        }
    }

    add_linear("projector", "projector", projector);

    refs.push_back({"lm", "lm.tok_emb", &tok_emb});
    refs.push_back({"lm", "lm.pos", &lm_pos});
    for (size_t i = 0; i < lm_blocks.size(); ++i) {
        add_block("lm", "lm.block" + std::to_string(i), lm_blocks[i]);
    }
    add_ln("lm", "lm.ln_f", lm_ln_f);
    add_linear("lm", "lm.head", head);
    return refs;
}

std::vector<ParamRef> ToyVlm::param_refs() const {
    return const_cast<ToyVlm*>(this)->param_refs();
}

void ToyVlm::set_trainable(const std::set<std::string>& groups) {
    for (const auto& ref : param_refs()) {
        ref.param->trainable = groups.count(ref.group) > 0;
    }
}

void ToyVlm::zero_grads() {
    for (const auto& ref : param_refs()) ref.param->zero_grad();
}

bool ToyVlm::group_trainable(const std::string& group) const {
    for (const auto& ref : param_refs()) {
        if (ref.group == group && ref.param->trainable) return true;
    }
    return false;
}

bool ToyVlm::has_adapters() const {
    for (const auto& blk : vision_blocks) {
        if (blk.attn.q.adapter || blk.attn.v.adapter) return true;
    }
    return false;
}

// ---------------------------------------------------------------------------
// forward / backward
// ---------------------------------------------------------------------------

MatrixXd ToyVlm::image_patches(const util::Image& img) const {
    if (img.width != config.image_size || img.height != config.image_size) {
        throw DataError("image dimension mismatch: expected " + std::to_string(config.image_size) +
                        "x" + std::to_string(config.image_size) + ", got " +
                        std::to_string(img.width) + "x" + std::to_string(img.height));
    }
    const std::vector<double> gray = util::to_gray(img);
    const int side = config.image_size / config.patch_size;
    const int ps = config.patch_size;
    MatrixXd patches(config.n_visual_tokens(), config.patch_dim());
    for (int py = 0; py < side; ++py) {
        for (int px = 0; px < side; ++px) {
            const int p = py * side + px;
            for (int dy = 0; dy < ps; ++dy) {
                for (int dx = 0; dx < ps; ++dx) {
                    const int y = py * ps + dy, x = px * ps + dx;
                    patches(p, dy * ps + dx) = gray[static_cast<size_t>(y) * config.image_size + x];
                }
            }
        }
    }
    return patches;
}

MatrixXd ToyVlm::encode_image(const util::Image& img, VisionCache* cache) const {
    VisionCache local;
    VisionCache* c = cache ? cache : &local;
    c->patches = image_patches(img);
    MatrixXd x = patch_proj.forward(c->patches, &c->patch_proj);
    x += vision_pos.value;
    c->stack.blocks.resize(vision_blocks.size());
    for (size_t i = 0; i < vision_blocks.size(); ++i) {
        x = vision_blocks[i].forward(x, &c->stack.blocks[i]);
        check_finite(x, "vision.block" + std::to_string(i));
    }
    return vision_ln_f.forward(x, &c->stack.ln_f);
}

void ToyVlm::vision_backward(const VisionCache& cache, const MatrixXd& d_out) {
    MatrixXd dx = vision_ln_f.backward(cache.stack.ln_f, d_out);
    for (size_t i = vision_blocks.size(); i-- > 0;) {
        dx = vision_blocks[i].backward(cache.stack.blocks[i], dx);
    }
    vision_pos.accumulate(dx);
    patch_proj.backward(cache.patch_proj, dx);
}

MatrixXd ToyVlm::project(const MatrixXd& visual_tokens, LinearCache* cache) const {
    if (visual_tokens.cols() != config.d_vision) {
        throw DataError("projector width mismatch: expected " + std::to_string(config.d_vision) +
                        ", got " + std::to_string(visual_tokens.cols()));
    }
    return projector.forward(visual_tokens, cache);
}

AssembledSequence ToyVlm::assemble(const std::optional<MatrixXd>& projected_visual,
                                   const std::vector<TextSegment>& segments) const {
    AssembledSequence seq;
    seq.n_visual = projected_visual ? static_cast<int>(projected_visual->rows()) : 0;
    size_t total = static_cast<size_t>(seq.n_visual);
    for (const auto& s : segments) total += s.ids.size();
    if (total > static_cast<size_t>(config.max_seq_len)) {
        throw DataError("sequence overflow: " + std::to_string(total) + " tokens exceed budget " +
                        std::to_string(config.max_seq_len));
    }
    if (total == 0) throw DataError("cannot assemble an empty sequence");

    seq.inputs.resize(static_cast<Eigen::Index>(total), config.d_lm);
    seq.tokens.assign(total, -1);
    seq.mask.assign(total, 0);

    int pos = 0;
    if (seq.n_visual > 0) {
        if (projected_visual->cols() != config.d_lm) {
            throw DataError("visual embedding width mismatch");
        }
        seq.inputs.topRows(seq.n_visual) = *projected_visual;
        seq.segments.push_back({"visual", 0, seq.n_visual});
        pos = seq.n_visual;
    }
    for (const auto& s : segments) {
        const int start = pos;
        for (const int id : s.ids) {
            if (id < 0 || id >= config.vocab_size) {
                throw DataError("token id out of range: " + std::to_string(id));
            }
            seq.inputs.row(pos) = tok_emb.value.row(id);
            seq.tokens[static_cast<size_t>(pos)] = id;
            seq.mask[static_cast<size_t>(pos)] = s.supervised ? 1 : 0;
            ++pos;
        }
        seq.segments.push_back({s.label, start, pos});
    }
    if (!seq.mask.empty() && seq.mask[0]) {
        throw DataError("position 0 cannot be supervised (no prefix to condition on)");
    }
    return seq;
}

std::vector<TextSegment> ToyVlm::alignment_segments(const std::string& caption) const {
    std::vector<int> ids = tokenizer.encode(caption);
    ids.push_back(Tokenizer::kEos);
    return {{std::move(ids), true, "caption"}};
}

std::vector<TextSegment> ToyVlm::instruction_segments(
    const std::vector<std::pair<std::string, std::string>>& turns) const {
    std::vector<TextSegment> segs;
    for (size_t i = 0; i < turns.size(); ++i) {
        TextSegment q{tokenizer.encode(turns[i].first), false,
                      "question" + std::to_string(i)};
        if (!q.ids.empty()) segs.push_back(std::move(q));
        std::vector<int> a = tokenizer.encode(turns[i].second);
        a.push_back(Tokenizer::kEos);
        segs.push_back({std::move(a), true, "answer" + std::to_string(i)});
    }
    return segs;
}

std::vector<TextSegment> ToyVlm::text_segments(const std::string& text) const {
    std::vector<TextSegment> segs;
    segs.push_back({{Tokenizer::kBos}, false, "bos"});
    std::vector<int> ids = tokenizer.encode(text);
    ids.push_back(Tokenizer::kEos);
    segs.push_back({std::move(ids), true, "text"});
    return segs;
}

std::vector<TextSegment> ToyVlm::prompt_segments(bool has_image, const std::string& prompt) const {
    std::vector<TextSegment> segs;
    if (!has_image) segs.push_back({{Tokenizer::kBos}, false, "bos"});
    segs.push_back({tokenizer.encode(prompt), false, "prompt"});
    return segs;
}

MatrixXd ToyVlm::lm_forward(const MatrixXd& inputs, LmCache* cache) const {
    const auto T = inputs.rows();
    if (T > config.max_seq_len) {
        throw DataError("sequence overflow in lm_forward: " + std::to_string(T));
    }
    LmCache local;
    LmCache* c = cache ? cache : &local;
    c->seq_len = static_cast<int>(T);
    MatrixXd x = inputs + lm_pos.value.topRows(T);
    c->stack.blocks.resize(lm_blocks.size());
    for (size_t i = 0; i < lm_blocks.size(); ++i) {
        x = lm_blocks[i].forward(x, &c->stack.blocks[i]);
        check_finite(x, "lm.block" + std::to_string(i));
    }
    x = lm_ln_f.forward(x, &c->stack.ln_f);
    MatrixXd logits = head.forward(x, &c->head);
    check_finite(logits, "lm.head");
    return logits;
}

MatrixXd ToyVlm::lm_backward(const LmCache& cache, const MatrixXd& dlogits) {
    MatrixXd dx = head.backward(cache.head, dlogits);
    dx = lm_ln_f.backward(cache.stack.ln_f, dx);
    for (size_t i = lm_blocks.size(); i-- > 0;) {
        dx = lm_blocks[i].backward(cache.stack.blocks[i], dx);
    }
    if (lm_pos.trainable) lm_pos.grad.topRows(cache.seq_len) += dx;
    return dx;
}

GenerateResult ToyVlm::generate(const std::optional<util::Image>& image,
                                const std::string& prompt, const DecodeConfig& decode) const {
    std::optional<MatrixXd> projected;
    if (image) projected = project(encode_image(*image));
    AssembledSequence seq = assemble(projected, prompt_segments(image.has_value(), prompt));

    GenerateResult result;
    std::vector<int> generated;
    MatrixXd inputs = seq.inputs;
    result.truncated = true;  // cleared when <eos> arrives within budget
    for (int step = 0; step < decode.max_new_tokens; ++step) {
        const MatrixXd logits = lm_forward(inputs);
        Eigen::Index next = 0;
        logits.row(logits.rows() - 1).maxCoeff(&next);
        if (static_cast<int>(next) == Tokenizer::kEos) {
            result.truncated = false;
            break;
        }
        generated.push_back(static_cast<int>(next));
        if (inputs.rows() + 1 > config.max_seq_len) break;
        inputs.conservativeResize(inputs.rows() + 1, Eigen::NoChange);
        inputs.row(inputs.rows() - 1) = tok_emb.value.row(next);
    }
    result.text = tokenizer.decode(generated);
    return result;
}

void ToyVlm::merge_lora() {
    for (auto& blk : vision_blocks) {
        blk.attn.q.merge_adapter();
        blk.attn.v.merge_adapter();
    }
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

namespace {

std::string_view tensor_bytes(const Param& p) {
    return {reinterpret_cast<const char*>(p.value.data()),
            static_cast<size_t>(p.value.size()) * sizeof(double)};
}

const std::vector<std::string>& checkpoint_groups() {
    static const std::vector<std::string> g = {"vision.base", "vision.lora", "projector", "lm"};
    return g;
}

}  // namespace

void ToyVlm::save(const fs::path& dir) const {
    fs::create_directories(dir);
    json cfg = config.to_json();
    cfg["has_adapters"] = has_adapters();
    {
        std::ofstream f(dir / "config.json", std::ios::binary);
        if (!f) throw IoError("cannot write checkpoint config: " + (dir / "config.json").string());
        f << cfg.dump(2) << "\n";
    }

    const auto refs = param_refs();
    json index;
    index["format"] = "f64-colmajor";
    index["groups"] = json::object();
    for (const auto& group : checkpoint_groups()) {
        json entries = json::array();
        std::ofstream bin(dir / (group + ".bin"), std::ios::binary);
        if (!bin) throw IoError("cannot write checkpoint tensors for group " + group);
        for (const auto& ref : refs) {
            if (ref.group != group) continue;
            const auto bytes = tensor_bytes(*ref.param);
            bin.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
            entries.push_back({{"name", ref.name},
                               {"rows", ref.param->value.rows()},
                               {"cols", ref.param->value.cols()},
                               {"sha256", util::sha256_hex(bytes)}});
        }
        if (!bin) throw IoError("failed writing checkpoint group " + group);
        index["groups"][group] = std::move(entries);
    }
    std::ofstream f(dir / "index.json", std::ios::binary);
    if (!f) throw IoError("cannot write checkpoint index");
    f << index.dump(2) << "\n";
}

ToyVlm ToyVlm::load(const fs::path& dir) {
    std::ifstream cf(dir / "config.json");
    if (!cf) throw IoError("cannot open checkpoint config in " + dir.string());
    json cfg_json;
    cf >> cfg_json;
    const ModelConfig cfg = ModelConfig::from_json(cfg_json);
    ToyVlm vlm(cfg, /*seed=*/0);
    if (!cfg_json.value("has_adapters", true)) vlm.merge_lora();  // drops zero-init adapters

    std::ifstream xf(dir / "index.json");
    if (!xf) throw IoError("cannot open checkpoint index in " + dir.string());
    json index;
    xf >> index;

    std::map<std::string, std::vector<ParamRef>> by_group;
    for (const auto& ref : vlm.param_refs()) by_group[ref.group].push_back(ref);

    for (const auto& group : checkpoint_groups()) {
        const auto& entries = index.at("groups").at(group);
        auto& refs = by_group[group];
        if (entries.size() != refs.size()) {
            throw DataError("checkpoint group " + group + " has " +
                            std::to_string(entries.size()) + " tensors, model expects " +
                            std::to_string(refs.size()));
        }
        std::ifstream bin(dir / (group + ".bin"), std::ios::binary);
        if (!bin && !refs.empty()) throw IoError("cannot open checkpoint group " + group);
        for (size_t i = 0; i < refs.size(); ++i) {
            const auto& e = entries[i];
            Param& p = *refs[i].param;
            if (e.at("name").get<std::string>() != refs[i].name) {
                throw DataError("checkpoint tensor order mismatch in group " + group);
            }
            if (e.at("rows").get<Eigen::Index>() != p.value.rows() ||
                e.at("cols").get<Eigen::Index>() != p.value.cols()) {
                throw DataError("checkpoint shape mismatch for " + refs[i].name);
            }
            const size_t n = static_cast<size_t>(p.value.size()) * sizeof(double);
            std::vector<char> buf(n);
            bin.read(buf.data(), static_cast<std::streamsize>(n));
            if (static_cast<size_t>(bin.gcount()) != n) {
                throw DataError("checkpoint truncated in group " + group);
            }
            if (util::sha256_hex({buf.data(), n}) != e.at("sha256").get<std::string>()) {
                throw DataError("checkpoint checksum mismatch for " + refs[i].name);
            }
            std::memcpy(p.value.data(), buf.data(), n);
        }
    }
    return vlm;
}

std::string ToyVlm::group_checksum(const std::string& group) const {
    std::string bytes;
    for (const auto& ref : param_refs()) {
        if (ref.group != group) continue;
        const auto b = tensor_bytes(*ref.param);
        bytes.append(b.data(), b.size());
    }
    return util::sha256_hex(bytes);
}

}  // namespace vlmkit::model
