#include "stmix/reparam.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace stmix {

namespace {

using EMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using CEMap = Eigen::Map<const EMat>;

Matrix linear(const Matrix& x, const Matrix& w, const std::vector<float>& b) {
    Matrix y = matmul(x, w);
    if (!b.empty()) {
        if (static_cast<int>(b.size()) != y.cols) throw ShapeError("linear: bias size mismatch");
        for (int i = 0; i < y.rows; ++i)
            for (int j = 0; j < y.cols; ++j) y.at(i, j) += b[j];
    }
    return y;
}

// Depthwise spatial conv where out-of-range taps read a per-channel pad value
// (the BN image of zero). padval == nullptr means plain zero padding.
TokenGrid conv2d_padval(const TokenGrid& x, const Kernel2d& k, const std::vector<float>& bias,
                        const std::vector<float>* padval) {
    const int ph = (k.kh - 1) / 2;
    const int pw = (k.kw - 1) / 2;
    const int stride = k.kh * k.kw;
    TokenGrid out(x.t, x.h, x.w, x.c);
    for (int ti = 0; ti < x.t; ++ti) {
        for (int i = 0; i < x.h; ++i) {
            for (int j = 0; j < x.w; ++j) {
                float* o = &out.at(ti, i, j, 0);
                for (int ch = 0; ch < x.c; ++ch) o[ch] = bias[ch];
                for (int a = 0; a < k.kh; ++a) {
                    const int ii = i + a - ph;
                    for (int b = 0; b < k.kw; ++b) {
                        const int jj = j + b - pw;
                        const float* kw_ = &k.w[static_cast<size_t>(a) * k.kw + b];
                        if (ii < 0 || ii >= x.h || jj < 0 || jj >= x.w) {
                            if (padval)
                                for (int ch = 0; ch < x.c; ++ch)
                                    o[ch] += kw_[static_cast<size_t>(ch) * stride] * (*padval)[ch];
                            continue;
                        }
                        const float* xi = &x.at(ti, ii, jj, 0);
                        for (int ch = 0; ch < x.c; ++ch)
                            o[ch] += kw_[static_cast<size_t>(ch) * stride] * xi[ch];
                    }
                }
            }
        }
    }
    return out;
}

TokenGrid conv1d_padval(const TokenGrid& x, const Kernel1d& k, const std::vector<float>& bias,
                        const std::vector<float>* padval) {
    const int pt = (k.kt - 1) / 2;
    const std::vector<float> tm = to_temporal_major(x);
    std::vector<float> out(tm.size());
    const size_t rows = static_cast<size_t>(x.h) * x.w * x.c;
    for (size_t r = 0; r < rows; ++r) {
        const int ch = static_cast<int>(r % x.c);
        const float* src = &tm[r * x.t];
        float* dst = &out[r * x.t];
        const float* kw_ = &k.w[static_cast<size_t>(ch) * k.kt];
        const float pad = padval ? (*padval)[ch] : 0.0f;
        for (int ti = 0; ti < x.t; ++ti) {
            float acc = bias[ch];
            for (int a = 0; a < k.kt; ++a) {
                const int tt = ti + a - pt;
                acc += kw_[a] * ((tt < 0 || tt >= x.t) ? (padval ? pad : 0.0f) : src[tt]);
            }
            dst[ti] = acc;
        }
    }
    return from_temporal_major(out, x.t, x.h, x.w, x.c);
}

void bn_scale_shift(const BnStats& bn, std::vector<float>& scale, std::vector<float>& shift) {
    const int c = bn.channels();
    scale.resize(c);
    shift.resize(c);
    for (int ch = 0; ch < c; ++ch) {
        if (bn.var[ch] < 0.0f) throw ShapeError("bn: negative variance");
        const float s = bn.gamma[ch] / std::sqrt(bn.var[ch] + bn.eps);
        scale[ch] = s;
        shift[ch] = bn.beta[ch] - s * bn.mean[ch];
    }
}

void check_conv_input(const FusableConv& conv, const TokenGrid& x) {
    if (conv.channels() != x.c)
        throw ShapeError("FusableConv: channel mismatch (" + std::to_string(conv.channels()) +
                         " vs " + std::to_string(x.c) + ")");
    const int k = conv.kind == ConvKind::Spatial2d ? conv.k2.kh : conv.k1.kt;
    const int k2 = conv.kind == ConvKind::Spatial2d ? conv.k2.kw : 1;
    if (k % 2 == 0 || k2 % 2 == 0) throw ShapeError("FusableConv: kernel size must be odd");
    if (static_cast<int>(conv.bias.size()) != conv.channels())
        throw ShapeError("FusableConv: bias size mismatch");
    if (conv.bn && conv.bn->channels() != conv.channels())
        throw ShapeError("FusableConv: bn channel mismatch");
}

TokenGrid run_conv(const FusableConv& conv, const TokenGrid& x, const std::vector<float>* padval,
                   bool boost_center) {
    if (conv.kind == ConvKind::Spatial2d) {
        if (!boost_center) return conv2d_padval(x, conv.k2, conv.bias, padval);
        Kernel2d k = conv.k2;
        const int center = (k.kh / 2) * k.kw + (k.kw / 2);
        for (int ch = 0; ch < k.channels; ++ch)
            k.w[static_cast<size_t>(ch) * k.taps() + center] += 1.0f;
        return conv2d_padval(x, k, conv.bias, padval);
    }
    if (!boost_center) return conv1d_padval(x, conv.k1, conv.bias, padval);
    Kernel1d k = conv.k1;
    const int center = k.kt / 2;
    for (int ch = 0; ch < k.channels; ++ch)
        k.w[static_cast<size_t>(ch) * k.kt + center] += 1.0f;
    return conv1d_padval(x, k, conv.bias, padval);
}

void add_inplace(TokenGrid& y, const TokenGrid& x) {
    for (size_t i = 0; i < y.data.size(); ++i) y.data[i] += x.data[i];
}

float kernel_tap_sum(const FusableConv& conv, int ch) {
    float s = 0.0f;
    const int taps = conv.taps();
    const std::vector<float>& w = conv.kind == ConvKind::Spatial2d ? conv.k2.w : conv.k1.w;
    for (int a = 0; a < taps; ++a) s += w[static_cast<size_t>(ch) * taps + a];
    return s;
}

}  // namespace

long FusableConv::param_count() const {
    long n = static_cast<long>(channels()) * taps() + channels();
    if (bn) n += 4L * channels();
    return n;
}

TokenGrid FusableConv::forward_conv_only(const TokenGrid& x) const {
    check_conv_input(*this, x);
    if (!bn) return run_conv(*this, x, nullptr, false);
    std::vector<float> scale, shift;
    bn_scale_shift(*bn, scale, shift);
    TokenGrid xb = batchnorm(x, *bn);
    return run_conv(*this, xb, &shift, false);
}

TokenGrid FusableConv::forward(const TokenGrid& x) const {
    check_conv_input(*this, x);
    if (bn) {
        TokenGrid y = forward_conv_only(x);
        if (skip) add_inplace(y, x);
        return y;
    }
    // BN-free residual goes through the center tap so fold_skip is exact.
    return run_conv(*this, x, nullptr, skip);
}

FoldOutcome fold_bn(const FusableConv& conv) {
    if (!conv.bn) return {conv, false};
    std::vector<float> scale, shift;
    bn_scale_shift(*conv.bn, scale, shift);
    FusableConv out = conv;
    const int taps = conv.taps();
    std::vector<float>& w = out.kind == ConvKind::Spatial2d ? out.k2.w : out.k1.w;
    for (int ch = 0; ch < conv.channels(); ++ch) {
        out.bias[ch] = conv.bias[ch] + shift[ch] * kernel_tap_sum(conv, ch);
        for (int a = 0; a < taps; ++a) w[static_cast<size_t>(ch) * taps + a] *= scale[ch];
    }
    out.bn.reset();
    return {out, true};
}

FoldOutcome fold_skip(const FusableConv& conv) {
    if (conv.bn) throw ShapeError("fold_skip: fold BN first");
    if (!conv.skip) return {conv, false};
    FusableConv out = conv;
    const int taps = conv.taps();
    std::vector<float>& w = out.kind == ConvKind::Spatial2d ? out.k2.w : out.k1.w;
    const int center =
        conv.kind == ConvKind::Spatial2d ? (conv.k2.kh / 2) * conv.k2.kw + (conv.k2.kw / 2)
                                         : conv.k1.kt / 2;
    for (int ch = 0; ch < conv.channels(); ++ch)
        w[static_cast<size_t>(ch) * taps + center] += 1.0f;
    out.skip = false;
    return {out, true};
}

FoldOutcome fold_all(const FusableConv& conv) {
    FoldOutcome a = fold_bn(conv);
    FoldOutcome b = fold_skip(a.conv);
    return {b.conv, a.changed || b.changed};
}

long STAttentionParams::param_count() const {
    const long c = channels();
    long n = static_cast<long>(tpe.rows) * tpe.cols;
    n += cpe.param_count();
    n += 4L * (c * c + c);
    n += 2L * c;  // layernorm scale/shift
    return n;
}

long ConvFFNParams::param_count() const {
    long n = dw.param_count();
    n += static_cast<long>(expand.rows) * expand.cols + expand_bias.size();
    n += static_cast<long>(project.rows) * project.cols + project_bias.size();
    return n;
}

long FFNParams::param_count() const {
    return static_cast<long>(expand.rows) * expand.cols + expand_bias.size() +
           static_cast<long>(project.rows) * project.cols + project_bias.size();
}

TokenGrid st_repmixer_forward(const TokenGrid& x, const STRepMixerParams& p, BlockMode mode) {
    if (p.temporal.kind != ConvKind::Temporal1d || p.spatial.kind != ConvKind::Spatial2d)
        throw ShapeError("st_repmixer: wrong conv kinds");
    if (p.channels() != x.c) throw ShapeError("st_repmixer: channel mismatch");
    if (mode == BlockMode::Fused && !(p.temporal.folded() && p.spatial.folded()))
        throw ShapeError("st_repmixer: fused mode requires folded parameters");
    TokenGrid xprime = p.temporal.forward(x);
    return p.spatial.forward(xprime);
}

TokenGrid add_tpe(const TokenGrid& x, const Matrix& tpe) {
    if (tpe.rows != x.t || tpe.cols != x.c)
        throw ShapeError("add_tpe: TPE shape " + std::to_string(tpe.rows) + "x" +
                         std::to_string(tpe.cols) + " does not match input (t=" +
                         std::to_string(x.t) + ", c=" + std::to_string(x.c) + ")");
    TokenGrid out = x;
    for (int ti = 0; ti < x.t; ++ti)
        for (int i = 0; i < x.h; ++i)
            for (int j = 0; j < x.w; ++j) {
                float* o = &out.at(ti, i, j, 0);
                const float* p = &tpe.at(ti, 0);
                for (int ch = 0; ch < x.c; ++ch) o[ch] += p[ch];
            }
    return out;
}

TokenGrid layernorm_tokens(const TokenGrid& x, const LayerNormParams& ln) {
    if (static_cast<int>(ln.scale.size()) != x.c || static_cast<int>(ln.shift.size()) != x.c)
        throw ShapeError("layernorm: parameter size mismatch");
    TokenGrid out(x.t, x.h, x.w, x.c);
    const int n = x.tokens();
    for (int tok = 0; tok < n; ++tok) {
        const float* xi = &x.data[static_cast<size_t>(tok) * x.c];
        float* o = &out.data[static_cast<size_t>(tok) * x.c];
        float mean = 0.0f;
        for (int ch = 0; ch < x.c; ++ch) mean += xi[ch];
        mean /= static_cast<float>(x.c);
        float var = 0.0f;
        for (int ch = 0; ch < x.c; ++ch) {
            const float d = xi[ch] - mean;
            var += d * d;
        }
        var /= static_cast<float>(x.c);
        const float inv = 1.0f / std::sqrt(var + ln.eps);
        for (int ch = 0; ch < x.c; ++ch)
            o[ch] = (xi[ch] - mean) * inv * ln.scale[ch] + ln.shift[ch];
    }
    return out;
}

Matrix multihead_attention(const Matrix& tokens, const STAttentionParams& p) {
    const int c = tokens.cols;
    if (c % p.heads != 0) throw ShapeError("attention: channels not divisible by heads");
    if (p.wq.rows != c || p.wq.cols != c || p.wk.rows != c || p.wv.rows != c || p.wo.rows != c)
        throw ShapeError("attention: projection shape mismatch");
    const int n = tokens.rows;
    const int dh = c / p.heads;
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

    Matrix q = linear(tokens, p.wq, p.bq);
    Matrix k = linear(tokens, p.wk, p.bk);
    Matrix v = linear(tokens, p.wv, p.bv);
    Matrix concat(n, c);

    CEMap mq(q.data.data(), n, c), mk(k.data.data(), n, c), mv(v.data.data(), n, c);
    EMap mo(concat.data.data(), n, c);
    EMat scores(n, n);
    for (int hd = 0; hd < p.heads; ++hd) {
        const int off = hd * dh;
        scores.noalias() = mq.middleCols(off, dh) * mk.middleCols(off, dh).transpose();
        scores *= scale;
        for (int i = 0; i < n; ++i) {
            auto row = scores.row(i);
            const float mx = row.maxCoeff();
            row = (row.array() - mx).exp();
            row /= row.sum();
        }
        mo.middleCols(off, dh).noalias() = scores * mv.middleCols(off, dh);
    }
    return linear(concat, p.wo, p.bo);
}

TokenGrid st_attention_forward(const TokenGrid& x, const STAttentionParams& p, BlockMode mode) {
    if (x.c != p.channels()) throw ShapeError("st_attention: channel mismatch");
    TokenGrid xprime = add_tpe(x, p.tpe);

    TokenGrid y(1, 1, 1, 1);
    if (mode == BlockMode::Train) {
        if (!p.cpe.skip) throw ShapeError("st_attention: train mode expects unfolded CPE");
        y = p.cpe.forward_conv_only(xprime);
        add_inplace(y, xprime);
    } else {
        if (!p.cpe.folded()) throw ShapeError("st_attention: fused mode requires folded CPE");
        y = p.cpe.forward(xprime);
    }

    TokenGrid z = layernorm_tokens(y, p.ln);
    Matrix attn = multihead_attention(tokens_of(z), p);
    Matrix yt = tokens_of(y);
    for (size_t i = 0; i < yt.data.size(); ++i) yt.data[i] += attn.data[i];
    return grid_of(yt, x.t, x.h, x.w);
}

TokenGrid convffn_forward(const TokenGrid& x, const ConvFFNParams& p, BlockMode mode) {
    if (p.dw.kind != ConvKind::Spatial2d) throw ShapeError("convffn: dw must be spatial");
    if (p.channels() != x.c) throw ShapeError("convffn: channel mismatch");
    if (mode == BlockMode::Fused && !p.dw.folded())
        throw ShapeError("convffn: fused mode requires folded dw");
    TokenGrid d = p.dw.forward(x);
    Matrix e = linear(tokens_of(d), p.expand, p.expand_bias);
    Matrix o = linear(gelu(e), p.project, p.project_bias);
    for (size_t i = 0; i < o.data.size(); ++i) o.data[i] += x.data[i];
    return grid_of(o, x.t, x.h, x.w);
}

TokenGrid ffn_forward(const TokenGrid& x, const FFNParams& p) {
    Matrix e = linear(tokens_of(x), p.expand, p.expand_bias);
    Matrix o = linear(gelu(e), p.project, p.project_bias);
    for (size_t i = 0; i < o.data.size(); ++i) o.data[i] += x.data[i];
    return grid_of(o, x.t, x.h, x.w);
}

ReparamOutcome<STRepMixerParams> reparameterize(const STRepMixerParams& p) {
    FoldOutcome t = fold_all(p.temporal);
    FoldOutcome s = fold_all(p.spatial);
    return {{t.conv, s.conv}, t.changed || s.changed};
}

ReparamOutcome<STAttentionParams> reparameterize(const STAttentionParams& p) {
    STAttentionParams out = p;
    FoldOutcome c = fold_all(p.cpe);
    out.cpe = c.conv;
    return {out, c.changed};
}

ReparamOutcome<ConvFFNParams> reparameterize(const ConvFFNParams& p) {
    ConvFFNParams out = p;
    FoldOutcome d = fold_all(p.dw);
    out.dw = d.conv;
    return {out, d.changed};
}

FusableConv make_random_conv(ConvKind kind, int channels, int ksize, Rng& rng, float scale,
                             bool with_bn, bool with_skip) {
    FusableConv conv;
    conv.kind = kind;
    if (kind == ConvKind::Spatial2d) {
        conv.k2 = Kernel2d(channels, ksize, ksize);
        for (float& v : conv.k2.w) v = uniform(rng, -scale, scale);
    } else {
        conv.k1 = Kernel1d(channels, ksize);
        for (float& v : conv.k1.w) v = uniform(rng, -scale, scale);
    }
    conv.bias.resize(channels);
    for (float& v : conv.bias) v = uniform(rng, -0.1f * scale, 0.1f * scale);
    if (with_bn) {
        BnStats bn(channels);
        for (int ch = 0; ch < channels; ++ch) {
            bn.gamma[ch] = uniform(rng, 0.5f, 1.5f);
            bn.beta[ch] = uniform(rng, -0.3f, 0.3f);
            bn.mean[ch] = uniform(rng, -0.3f, 0.3f);
            bn.var[ch] = uniform(rng, 0.1f, 1.0f);
        }
        conv.bn = bn;
    }
    conv.skip = with_skip;
    return conv;
}

STRepMixerParams make_random_repmixer(int channels, int kt, int ks, Rng& rng, float scale) {
    STRepMixerParams p;
    p.temporal = make_random_conv(ConvKind::Temporal1d, channels, kt, rng, scale / kt, true, true);
    p.spatial =
        make_random_conv(ConvKind::Spatial2d, channels, ks, rng, scale / (ks * ks), true, true);
    return p;
}

namespace {
Matrix random_matrix(int r, int c, Rng& rng, float scale) {
    Matrix m(r, c);
    for (float& v : m.data) v = uniform(rng, -scale, scale);
    return m;
}
std::vector<float> random_bias(int n, Rng& rng, float scale) {
    std::vector<float> b(n);
    for (float& v : b) v = uniform(rng, -scale, scale);
    return b;
}
}  // namespace

STAttentionParams make_random_attention(int t, int channels, int heads, int cpe_kernel, Rng& rng,
                                        float proj_scale, bool zero_tpe) {
    if (channels % heads != 0) throw ShapeError("attention: channels not divisible by heads");
    const float ps = proj_scale > 0.0f ? proj_scale : 1.0f / std::sqrt(static_cast<float>(channels));
    STAttentionParams p;
    p.tpe = zero_tpe ? Matrix(t, channels) : random_matrix(t, channels, rng, 0.1f);
    p.cpe = make_random_conv(ConvKind::Spatial2d, channels, cpe_kernel, rng,
                             1.0f / (cpe_kernel * cpe_kernel), false, true);
    p.heads = heads;
    p.wq = random_matrix(channels, channels, rng, ps);
    p.wk = random_matrix(channels, channels, rng, ps);
    p.wv = random_matrix(channels, channels, rng, ps);
    p.wo = random_matrix(channels, channels, rng, ps);
    p.bq = random_bias(channels, rng, 0.05f);
    p.bk = random_bias(channels, rng, 0.05f);
    p.bv = random_bias(channels, rng, 0.05f);
    p.bo = random_bias(channels, rng, 0.05f);
    p.ln.scale.assign(channels, 1.0f);
    p.ln.shift.assign(channels, 0.0f);
    return p;
}

ConvFFNParams make_random_convffn(int channels, int ratio, int ks, Rng& rng, float scale) {
    ConvFFNParams p;
    p.ratio = ratio;
    p.dw = make_random_conv(ConvKind::Spatial2d, channels, ks, rng, 1.0f / (ks * ks), true, true);
    const int hidden = ratio * channels;
    const float se = scale > 0.0f ? scale : 1.0f / std::sqrt(static_cast<float>(channels));
    const float sp = scale > 0.0f ? scale : 1.0f / std::sqrt(static_cast<float>(hidden));
    p.expand = random_matrix(channels, hidden, rng, se);
    p.expand_bias = random_bias(hidden, rng, 0.05f);
    p.project = random_matrix(hidden, channels, rng, sp);
    p.project_bias = random_bias(channels, rng, 0.05f);
    return p;
}

FFNParams make_random_ffn(int channels, int ratio, Rng& rng, float scale) {
    FFNParams p;
    const int hidden = ratio * channels;
    const float se = scale > 0.0f ? scale : 1.0f / std::sqrt(static_cast<float>(channels));
    const float sp = scale > 0.0f ? scale : 1.0f / std::sqrt(static_cast<float>(hidden));
    p.expand = random_matrix(channels, hidden, rng, se);
    p.expand_bias = random_bias(hidden, rng, 0.05f);
    p.project = random_matrix(hidden, channels, rng, sp);
    p.project_bias = random_bias(channels, rng, 0.05f);
    return p;
}

FusableConv make_identity_temporal(int channels, int kt, bool train_form) {
    FusableConv conv;
    conv.kind = ConvKind::Temporal1d;
    conv.k1 = Kernel1d(channels, kt);
    conv.bias.assign(channels, 0.0f);
    if (train_form) {
        conv.bn = BnStats::identity(channels);
        conv.skip = true;
    } else {
        for (int ch = 0; ch < channels; ++ch)
            conv.k1.w[static_cast<size_t>(ch) * kt + kt / 2] = 1.0f;
    }
    return conv;
}

}  // namespace stmix
