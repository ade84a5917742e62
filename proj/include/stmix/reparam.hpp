#pragma once

#include <optional>
#include <vector>

#include "stmix/tensor.hpp"

namespace stmix {

enum class ConvKind { Temporal1d, Spatial2d };
enum class BlockMode { Train, Fused };

// A depthwise convolution (temporal-1D or spatial-2D) with optional batch-norm
// statistics applied to its input and an optional residual identity branch.
// Both decorations can be folded away into the kernel and bias.
struct FusableConv {
    ConvKind kind = ConvKind::Spatial2d;
    Kernel2d k2;  // used when kind == Spatial2d
    Kernel1d k1;  // used when kind == Temporal1d
    std::vector<float> bias;
    std::optional<BnStats> bn;
    bool skip = false;

    int channels() const { return kind == ConvKind::Spatial2d ? k2.channels : k1.channels; }
    int taps() const { return kind == ConvKind::Spatial2d ? k2.taps() : k1.taps(); }
    bool folded() const { return !bn.has_value() && !skip; }
    long param_count() const;

    // Train form evaluates BN then the convolution (padding positions carry
    // the BN shift), then adds the residual branch when `skip` is set. Once
    // BN is folded, the residual is evaluated through the center tap so the
    // skip-folded form is arithmetically identical.
    TokenGrid forward(const TokenGrid& x) const;

    // Convolution branch only (no residual add); used by the train-form block
    // equations that spell the residual out explicitly.
    TokenGrid forward_conv_only(const TokenGrid& x) const;
};

struct FoldOutcome {
    FusableConv conv;
    bool changed = false;
};

// Fold the batch-norm statistics into kernel and bias. No-op (changed=false)
// when BN is absent.
FoldOutcome fold_bn(const FusableConv& conv);

// Fold the residual identity branch into the center tap (+1.0 per channel).
// Requires BN to be folded first.
FoldOutcome fold_skip(const FusableConv& conv);

// Fold everything; idempotent.
FoldOutcome fold_all(const FusableConv& conv);

// ---- Block parameter bundles ------------------------------------------------

struct STRepMixerParams {
    FusableConv temporal;  // Temporal1d, skip, BN present in train form
    FusableConv spatial;   // Spatial2d, skip, BN present in train form
    int channels() const { return spatial.channels(); }
    long param_count() const { return temporal.param_count() + spatial.param_count(); }
};

struct LayerNormParams {
    std::vector<float> scale, shift;
    float eps = 1e-5f;
};

struct STAttentionParams {
    Matrix tpe;       // T x C, broadcast over (h, w)
    FusableConv cpe;  // Spatial2d, skip in train form, no BN
    int heads = 1;
    Matrix wq, wk, wv, wo;  // C x C, row-vector convention: y = x * W + b
    std::vector<float> bq, bk, bv, bo;
    LayerNormParams ln;
    int channels() const { return tpe.cols; }
    long param_count() const;
};

struct ConvFFNParams {
    FusableConv dw;  // Spatial2d, skip, BN present in train form
    Matrix expand;   // C x (r*C)
    std::vector<float> expand_bias;
    Matrix project;  // (r*C) x C
    std::vector<float> project_bias;
    int ratio = 2;
    int channels() const { return dw.channels(); }
    long param_count() const;
};

// Plain token-wise FFN (no convolution); used by the latency harness as the
// ViT-style channel mixer reference.
struct FFNParams {
    Matrix expand;
    std::vector<float> expand_bias;
    Matrix project;
    std::vector<float> project_bias;
    long param_count() const;
};

// ---- Forward passes ----------------------------------------------------------

TokenGrid st_repmixer_forward(const TokenGrid& x, const STRepMixerParams& p, BlockMode mode);
TokenGrid st_attention_forward(const TokenGrid& x, const STAttentionParams& p, BlockMode mode);
TokenGrid convffn_forward(const TokenGrid& x, const ConvFFNParams& p, BlockMode mode);
TokenGrid ffn_forward(const TokenGrid& x, const FFNParams& p);

// Positional-encoding stage of the attention block, exposed for testing:
// returns x + broadcast(tpe).
TokenGrid add_tpe(const TokenGrid& x, const Matrix& tpe);

TokenGrid layernorm_tokens(const TokenGrid& x, const LayerNormParams& ln);

// Multi-head self-attention over all t*h*w tokens, scale 1/sqrt(C/heads).
Matrix multihead_attention(const Matrix& tokens, const STAttentionParams& p);

// ---- Whole-block reparameterization -------------------------------------------

template <typename Params>
struct ReparamOutcome {
    Params params;
    bool changed = false;
};

ReparamOutcome<STRepMixerParams> reparameterize(const STRepMixerParams& p);
ReparamOutcome<STAttentionParams> reparameterize(const STAttentionParams& p);
ReparamOutcome<ConvFFNParams> reparameterize(const ConvFFNParams& p);

// ---- Random initialization (seeded) -------------------------------------------

FusableConv make_random_conv(ConvKind kind, int channels, int ksize, Rng& rng, float scale,
                             bool with_bn, bool with_skip);
STRepMixerParams make_random_repmixer(int channels, int kt, int ks, Rng& rng, float scale = 0.3f);
STAttentionParams make_random_attention(int t, int channels, int heads, int cpe_kernel, Rng& rng,
                                        float proj_scale = -1.0f, bool zero_tpe = false);
ConvFFNParams make_random_convffn(int channels, int ratio, int ks, Rng& rng, float scale = -1.0f);
FFNParams make_random_ffn(int channels, int ratio, Rng& rng, float scale = -1.0f);

// Temporal branch that is exactly the identity map: zero kernel and bias,
// identity BN, residual branch on (center tap 1.0 once folded).
FusableConv make_identity_temporal(int channels, int kt, bool train_form = true);

}  // namespace stmix
