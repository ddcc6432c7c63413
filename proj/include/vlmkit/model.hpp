#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "vlmkit/util/image.hpp"

namespace vlmkit::model {

using Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// config / tokenizer
// ---------------------------------------------------------------------------

struct ModelConfig {
    int image_size = 32;
    int patch_size = 8;
    int d_vision = 64;
    int n_vision_layers = 2;
    int d_lm = 64;
    int n_lm_layers = 2;
    int n_heads = 4;
    int vocab_size = 512;
    int max_seq_len = 256;
    int lora_rank = 4;
    double lora_alpha = 4.0;
    bool projector_bias = true;

    int n_visual_tokens() const {
        const int side = image_size / patch_size;
        return side * side;
    }
    int patch_dim() const { return patch_size * patch_size; }
    void validate() const;

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

// Byte-level tokenizer: ids 0..255 are raw bytes, then the special tokens.
// Covers zh/en uniformly without external vocab files.
struct Tokenizer {
    static constexpr int kBos = 256;
    static constexpr int kEos = 257;
    static constexpr int kImage = 258;
    static constexpr int kPad = 259;

    std::vector<int> encode(std::string_view text) const;
    std::string decode(const std::vector<int>& ids) const;  // drops special tokens
};

// ---------------------------------------------------------------------------
// parameters and layers (double precision, explicit backward)
// ---------------------------------------------------------------------------

struct Param {
    MatrixXd value;
    MatrixXd grad;
    bool trainable = false;

    void resize(Eigen::Index rows, Eigen::Index cols) {
        value.setZero(rows, cols);
        grad.setZero(rows, cols);
    }
    void zero_grad() { grad.setZero(); }
    void accumulate(const MatrixXd& g) {
        if (trainable) grad += g;
    }
};

// Low-rank adapter on one weight matrix: W_eff = W + (alpha/r) * B * A.
// B starts at zero so the adapter is exactly neutral at init.
struct LoraAdapter {
    Param a;  // [r, in]
    Param b;  // [out, r]
    int rank = 0;
    double alpha = 0.0;

    double scaling() const { return alpha / static_cast<double>(rank); }
    MatrixXd delta() const { return scaling() * (b.value * a.value); }
};

struct LinearCache {
    MatrixXd x;
    MatrixXd u;  // x * A^T when an adapter is attached
};

struct Linear {
    Param w;  // [out, in]
    Param b;  // [out, 1]
    bool has_bias = true;
    std::optional<LoraAdapter> adapter;

    MatrixXd forward(const MatrixXd& x, LinearCache* cache = nullptr) const;
    // Accumulates parameter grads (trainable only) and returns dx.
    MatrixXd backward(const LinearCache& cache, const MatrixXd& dy);
    void merge_adapter();
};

struct LayerNormCache {
    MatrixXd xhat;
    Eigen::VectorXd inv_std;
};

struct LayerNorm {
    Param gamma;  // [1, d]
    Param beta;   // [1, d]

    MatrixXd forward(const MatrixXd& x, LayerNormCache* cache = nullptr) const;
    MatrixXd backward(const LayerNormCache& cache, const MatrixXd& dy);
};

struct AttentionCache {
    LinearCache q, k, v, o;
    MatrixXd qp, kp, vp;
    std::vector<MatrixXd> att;  // per head, [T, T]
};

struct Attention {
    Linear q, k, v, o;
    int n_heads = 0;
    bool causal = false;

    MatrixXd forward(const MatrixXd& x, AttentionCache* cache = nullptr) const;
    MatrixXd backward(const AttentionCache& cache, const MatrixXd& dy);
};

struct MlpCache {
    LinearCache fc1, fc2;
    MatrixXd pre_act;
};

struct Mlp {
    Linear fc1, fc2;

    MatrixXd forward(const MatrixXd& x, MlpCache* cache = nullptr) const;
    MatrixXd backward(const MlpCache& cache, const MatrixXd& dy);
};

struct BlockCache {
    LayerNormCache ln1, ln2;
    AttentionCache attn;
    MlpCache mlp;
    MatrixXd x_in, x_mid;
};

// Pre-norm transformer block.
struct Block {
    LayerNorm ln1, ln2;
    Attention attn;
    Mlp mlp;

    MatrixXd forward(const MatrixXd& x, BlockCache* cache = nullptr) const;
    MatrixXd backward(const BlockCache& cache, const MatrixXd& dy);
};

struct StackCache {
    std::vector<BlockCache> blocks;
    LayerNormCache ln_f;
};

// ---------------------------------------------------------------------------
// sequence assembly
// ---------------------------------------------------------------------------

struct TextSegment {
    std::vector<int> ids;
    bool supervised = false;
    std::string label;
};

struct Segment {
    std::string label;
    int start = 0;
    int end = 0;  // half-open
};

// Visual rows first, then text rows; `tokens[i]` is -1 on visual rows. The
// mask marks supervised token positions: the loss on position i scores
// logits[i-1] against tokens[i].
struct AssembledSequence {
    MatrixXd inputs;  // [T, d_lm], before position embeddings
    std::vector<int> tokens;
    std::vector<uint8_t> mask;
    std::vector<Segment> segments;
    int n_visual = 0;

    int length() const { return static_cast<int>(tokens.size()); }
    size_t supervised_count() const;
};

struct DecodeConfig {
    int max_new_tokens = 64;
};

struct GenerateResult {
    std::string text;
    bool truncated = false;
};

// ---------------------------------------------------------------------------
// the composed model
// ---------------------------------------------------------------------------

struct VisionCache {
    MatrixXd patches;
    LinearCache patch_proj;
    StackCache stack;
};

struct LmCache {
    StackCache stack;
    LinearCache head;
    int seq_len = 0;
};

struct ParamRef {
    std::string group;  // vision.base | vision.lora | projector | lm
    std::string name;
    Param* param;
};

class ToyVlm {
public:
    ModelConfig config;
    Tokenizer tokenizer;

    // vision encoder
    Linear patch_proj;
    Param vision_pos;  // [n_visual_tokens, d_vision]
    std::vector<Block> vision_blocks;
    LayerNorm vision_ln_f;

    // cross-modal projector: one linear map, nothing else
    Linear projector;

    // language model
    Param tok_emb;  // [vocab, d_lm]
    Param lm_pos;   // [max_seq_len, d_lm]
    std::vector<Block> lm_blocks;
    LayerNorm lm_ln_f;
    Linear head;  // [vocab, d_lm], no bias

    ToyVlm(const ModelConfig& cfg, uint64_t seed);

    // Stable enumeration of every parameter; ordering defines the
    // serialization layout and optimizer slot identity.
    std::vector<ParamRef> param_refs();
    std::vector<ParamRef> param_refs() const;
    void set_trainable(const std::set<std::string>& groups);
    void zero_grads();
    bool group_trainable(const std::string& group) const;
    bool has_adapters() const;

    // [n_patches, d_vision]; adapters participate as W_eff.
    MatrixXd encode_image(const util::Image& img, VisionCache* cache = nullptr) const;
    void vision_backward(const VisionCache& cache, const MatrixXd& d_out);

    MatrixXd project(const MatrixXd& visual_tokens, LinearCache* cache = nullptr) const;

    // Assemble [visual ; text] inputs. Throws TruncationError (as DataError
    // subtype NumericError? no: DataError) if the budget is exceeded.
    AssembledSequence assemble(const std::optional<MatrixXd>& projected_visual,
                               const std::vector<TextSegment>& segments) const;

    // Segment builders encode the training templates.
    std::vector<TextSegment> alignment_segments(const std::string& caption) const;
    std::vector<TextSegment> instruction_segments(
        const std::vector<std::pair<std::string, std::string>>& turns) const;
    std::vector<TextSegment> text_segments(const std::string& text) const;
    std::vector<TextSegment> prompt_segments(bool has_image, const std::string& prompt) const;

    // Causal LM over assembled inputs; logits [T, vocab].
    MatrixXd lm_forward(const MatrixXd& inputs, LmCache* cache = nullptr) const;
    // Returns gradient w.r.t. the assembled inputs.
    MatrixXd lm_backward(const LmCache& cache, const MatrixXd& dlogits);

    GenerateResult generate(const std::optional<util::Image>& image, const std::string& prompt,
                            const DecodeConfig& decode = {}) const;

    void merge_lora();

    // Checkpoints: config.json + index.json + one tensor container per group;
    // loads verify shape and checksum for every tensor.
    void save(const std::filesystem::path& dir) const;
    static ToyVlm load(const std::filesystem::path& dir);
    std::string group_checksum(const std::string& group) const;

private:
    MatrixXd image_patches(const util::Image& img) const;
};

void check_finite(const MatrixXd& m, const std::string& where);

}  // namespace vlmkit::model
