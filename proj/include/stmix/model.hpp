#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stmix/reparam.hpp"

namespace stmix {

enum class BlockKind { RepMixer, Attention };

struct StageConfig {
    BlockKind kind = BlockKind::RepMixer;
    int repeat = 1;
    int channels = 1;
};

// Desk-scale encoder geometry. Text format is `key = value` per line; stages
// are comma-separated kind:repeat:channels tuples.
struct ModelConfig {
    int t = 8;
    int h = 16, w = 16;
    int stem = 2;  // patch downsample factor
    std::vector<StageConfig> stages;
    int embed_dim = 64;
    int heads = 4;
    int temporal_kernel = 3;
    int spatial_kernel = 3;
    int cpe_kernel = 7;
    int ffn_ratio = 2;

    void validate() const;
    int token_h() const { return h / stem; }
    int token_w() const { return w / stem; }
    std::string canonical_text() const;
    std::uint64_t hash() const;

    static ModelConfig parse(const std::string& text);
    static ModelConfig load_file(const std::string& path);
    static ModelConfig tiny_desk();
};

struct Transition {
    Matrix weight;  // C_in x C_out, pointwise
    std::vector<float> bias;
};

struct Block {
    BlockKind kind = BlockKind::RepMixer;
    STRepMixerParams mixer;  // valid when kind == RepMixer
    STAttentionParams attn;  // valid when kind == Attention
    ConvFFNParams ffn;
};

// Named view into one parameter tensor of a model.
struct ParamRef {
    std::string name;
    std::vector<int> shape;
    float* data = nullptr;
    size_t count = 0;
};

class Model {
public:
    Model() = default;

    static Model random(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    bool fused() const { return fused_; }

    // Fold every block; idempotent.
    Model reparameterized(bool* changed = nullptr) const;

    struct Encoded {
        Matrix frames;  // T x D
        Matrix video;   // 1 x D, L2-normalized
    };
    Encoded encode_video(const TokenGrid& v, bool normalize_frames = false) const;

    // Temporally pooled pre-projection feature (1 x C_last). The video
    // embedding is normalize(features * proj); split out so heads can be
    // re-evaluated without re-running the backbone.
    Matrix encode_features(const TokenGrid& v) const;
    Matrix project_features(const Matrix& features) const;

    long param_count() const;
    long flop_count() const;

    std::vector<ParamRef> param_refs();
    std::vector<const float*> param_data() const;
    // Trainable views selected by subset names (proj, stem, tpe, temporal,
    // spatial, cpe, attn, ffn, all); BN statistics are never trainable.
    std::vector<ParamRef> trainable_refs(const std::vector<std::string>& subsets);

    // Internal structure, exposed for serialization.
    std::vector<Transition>& transitions() { return transitions_; }
    std::vector<Block>& blocks() { return blocks_; }
    const std::vector<Block>& blocks() const { return blocks_; }
    Matrix& proj() { return proj_; }
    void set_fused(bool f) { fused_ = f; }

private:
    ModelConfig cfg_;
    Matrix stem_weight_;  // (3*f*f) x C_1
    std::vector<float> stem_bias_;
    std::vector<Transition> transitions_;  // one per stage boundary with a channel change
    std::vector<int> transition_stage_;    // stage index each transition precedes
    std::vector<Block> blocks_;
    std::vector<int> block_stage_;
    Matrix proj_;  // C_last x D, no bias
    bool fused_ = false;

    friend class ModelBuilder;

    TokenGrid apply_stem(const TokenGrid& v) const;
    Matrix frame_gap(const TokenGrid& x) const;  // T x C global average pool
};

// Column-wise mean of a T x D matrix; permutation-invariant.
Matrix temporal_pool(const Matrix& frames);

// Closed-form operation costs (multiply-accumulates x 2).
long dwconv_flops(int channels, int taps, int t, int h, int w);
long matmul_flops(long rows, long inner, long cols);
long attention_flops(int tokens, int channels);

}  // namespace stmix
