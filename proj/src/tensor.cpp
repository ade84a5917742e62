#include "stmix/tensor.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstring>

namespace stmix {

namespace {

using EMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using CEMap = Eigen::Map<const EMat>;

void check_channel_bias(int channels, const std::vector<float>& bias, const char* op) {
    if (static_cast<int>(bias.size()) != channels)
        throw ShapeError(std::string(op) + ": bias size " + std::to_string(bias.size()) +
                         " != channels " + std::to_string(channels));
}

}  // namespace

TokenGrid::TokenGrid(int t_, int h_, int w_, int c_) : t(t_), h(h_), w(w_), c(c_) {
    if (t < 1 || h < 1 || w < 1 || c < 1)
        throw ShapeError("TokenGrid: all dims must be >= 1");
    data.assign(static_cast<size_t>(t) * h * w * c, 0.0f);
}

bool TokenGrid::finite() const {
    for (float v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

Matrix::Matrix(int r, int c) : rows(r), cols(c) {
    if (r < 0 || c < 0) throw ShapeError("Matrix: negative dims");
    data.assign(static_cast<size_t>(r) * c, 0.0f);
}

bool Matrix::finite() const {
    for (float v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

Matrix Matrix::identity(int n) {
    Matrix m(n, n);
    for (int i = 0; i < n; ++i) m.at(i, i) = 1.0f;
    return m;
}

Kernel2d::Kernel2d(int channels_, int kh_, int kw_) : channels(channels_), kh(kh_), kw(kw_) {
    w.assign(static_cast<size_t>(channels) * kh * kw, 0.0f);
}

Kernel1d::Kernel1d(int channels_, int kt_) : channels(channels_), kt(kt_) {
    w.assign(static_cast<size_t>(channels) * kt, 0.0f);
}

BnStats::BnStats(int channels, float eps_) : eps(eps_) {
    gamma.assign(channels, 1.0f);
    beta.assign(channels, 0.0f);
    mean.assign(channels, 0.0f);
    var.assign(channels, 1.0f);
}

BnStats BnStats::identity(int channels) {
    BnStats s(channels);
    s.eps = 0.0f;
    return s;
}

TokenGrid dwconv2d(const TokenGrid& x, const Kernel2d& kernel, const std::vector<float>& bias) {
    if (kernel.channels != x.c)
        throw ShapeError("dwconv2d: kernel channels " + std::to_string(kernel.channels) +
                         " != input channels " + std::to_string(x.c));
    if (kernel.kh % 2 == 0 || kernel.kw % 2 == 0)
        throw ShapeError("dwconv2d: kernel size must be odd");
    check_channel_bias(x.c, bias, "dwconv2d");

    const int ph = (kernel.kh - 1) / 2;
    const int pw = (kernel.kw - 1) / 2;
    TokenGrid out(x.t, x.h, x.w, x.c);
    for (int ti = 0; ti < x.t; ++ti) {
        for (int i = 0; i < x.h; ++i) {
            for (int j = 0; j < x.w; ++j) {
                float* o = &out.at(ti, i, j, 0);
                for (int ch = 0; ch < x.c; ++ch) o[ch] = bias[ch];
                for (int a = 0; a < kernel.kh; ++a) {
                    const int ii = i + a - ph;
                    if (ii < 0 || ii >= x.h) continue;
                    for (int b = 0; b < kernel.kw; ++b) {
                        const int jj = j + b - pw;
                        if (jj < 0 || jj >= x.w) continue;
                        const float* xi = &x.at(ti, ii, jj, 0);
                        const float* kw_ = &kernel.w[static_cast<size_t>(a) * kernel.kw + b];
                        const int stride = kernel.kh * kernel.kw;
                        for (int ch = 0; ch < x.c; ++ch)
                            o[ch] += kw_[static_cast<size_t>(ch) * stride] * xi[ch];
                    }
                }
            }
        }
    }
    return out;
}

std::vector<float> to_temporal_major(const TokenGrid& x) {
    std::vector<float> buf(x.size());
    const size_t spatial = static_cast<size_t>(x.h) * x.w * x.c;
    for (int ti = 0; ti < x.t; ++ti) {
        const float* src = x.data.data() + static_cast<size_t>(ti) * spatial;
        for (size_t s = 0; s < spatial; ++s) buf[s * x.t + ti] = src[s];
    }
    return buf;
}

TokenGrid from_temporal_major(const std::vector<float>& buf, int t, int h, int w, int c) {
    TokenGrid x(t, h, w, c);
    if (buf.size() != x.size()) throw ShapeError("from_temporal_major: buffer size mismatch");
    const size_t spatial = static_cast<size_t>(h) * w * c;
    for (int ti = 0; ti < t; ++ti) {
        float* dst = x.data.data() + static_cast<size_t>(ti) * spatial;
        for (size_t s = 0; s < spatial; ++s) dst[s] = buf[s * t + ti];
    }
    return x;
}

TokenGrid dwconv1d_temporal(const TokenGrid& x, const Kernel1d& kernel,
                            const std::vector<float>& bias) {
    if (kernel.channels != x.c)
        throw ShapeError("dwconv1d_temporal: kernel channels " + std::to_string(kernel.channels) +
                         " != input channels " + std::to_string(x.c));
    if (kernel.kt % 2 == 0) throw ShapeError("dwconv1d_temporal: kernel size must be odd");
    check_channel_bias(x.c, bias, "dwconv1d_temporal");

    const int pt = (kernel.kt - 1) / 2;
    const std::vector<float> tm = to_temporal_major(x);
    std::vector<float> out(tm.size());
    const size_t rows = static_cast<size_t>(x.h) * x.w * x.c;
    for (size_t r = 0; r < rows; ++r) {
        const int ch = static_cast<int>(r % x.c);
        const float* src = &tm[r * x.t];
        float* dst = &out[r * x.t];
        const float* kw_ = &kernel.w[static_cast<size_t>(ch) * kernel.kt];
        for (int ti = 0; ti < x.t; ++ti) {
            float acc = bias[ch];
            for (int a = 0; a < kernel.kt; ++a) {
                const int tt = ti + a - pt;
                if (tt < 0 || tt >= x.t) continue;
                acc += kw_[a] * src[tt];
            }
            dst[ti] = acc;
        }
    }
    return from_temporal_major(out, x.t, x.h, x.w, x.c);
}

TokenGrid batchnorm(const TokenGrid& x, const BnStats& stats) {
    if (stats.channels() != x.c)
        throw ShapeError("batchnorm: stats channels " + std::to_string(stats.channels()) +
                         " != input channels " + std::to_string(x.c));
    if (stats.eps < 0.0f) throw ShapeError("batchnorm: eps must be >= 0");
    std::vector<float> scale(x.c), shift(x.c);
    for (int ch = 0; ch < x.c; ++ch) {
        if (stats.var[ch] < 0.0f) throw ShapeError("batchnorm: negative variance");
        const float s = stats.gamma[ch] / std::sqrt(stats.var[ch] + stats.eps);
        scale[ch] = s;
        shift[ch] = stats.beta[ch] - s * stats.mean[ch];
    }
    TokenGrid out(x.t, x.h, x.w, x.c);
    const size_t n = x.size();
    for (size_t idx = 0; idx < n; ++idx) {
        const int ch = static_cast<int>(idx % x.c);
        out.data[idx] = scale[ch] * x.data[idx] + shift[ch];
    }
    return out;
}

Matrix softmax_rows(const Matrix& m) {
    Matrix out(m.rows, m.cols);
    for (int i = 0; i < m.rows; ++i) {
        float mx = m.at(i, 0);
        for (int j = 1; j < m.cols; ++j) mx = std::max(mx, m.at(i, j));
        float sum = 0.0f;
        for (int j = 0; j < m.cols; ++j) {
            const float e = std::exp(m.at(i, j) - mx);
            out.at(i, j) = e;
            sum += e;
        }
        const float inv = 1.0f / sum;
        for (int j = 0; j < m.cols; ++j) out.at(i, j) *= inv;
    }
    return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows)
        throw ShapeError("matmul: inner dims " + std::to_string(a.cols) + " vs " +
                         std::to_string(b.rows));
    Matrix out(a.rows, b.cols);
    CEMap ma(a.data.data(), a.rows, a.cols);
    CEMap mb(b.data.data(), b.rows, b.cols);
    EMap mo(out.data.data(), out.rows, out.cols);
    mo.noalias() = ma * mb;
    return out;
}

float gelu(float x) { return 0.5f * x * (1.0f + std::erf(x * 0.70710678118654752f)); }

Matrix gelu(const Matrix& m) {
    Matrix out(m.rows, m.cols);
    for (size_t i = 0; i < m.data.size(); ++i) out.data[i] = gelu(m.data[i]);
    return out;
}

TokenGrid gelu(const TokenGrid& x) {
    TokenGrid out(x.t, x.h, x.w, x.c);
    for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = gelu(x.data[i]);
    return out;
}

NormalizedRows l2_normalize_rows(const Matrix& e) {
    NormalizedRows res;
    res.m = Matrix(e.rows, e.cols);
    for (int i = 0; i < e.rows; ++i) {
        float sq = 0.0f;
        for (int j = 0; j < e.cols; ++j) sq += e.at(i, j) * e.at(i, j);
        if (sq == 0.0f) {
            res.zero_rows.push_back(i);
            continue;
        }
        const float inv = 1.0f / std::sqrt(sq);
        for (int j = 0; j < e.cols; ++j) res.m.at(i, j) = e.at(i, j) * inv;
    }
    return res;
}

Matrix tokens_of(const TokenGrid& x) {
    Matrix m(x.tokens(), x.c);
    std::memcpy(m.data.data(), x.data.data(), x.size() * sizeof(float));
    return m;
}

TokenGrid grid_of(const Matrix& tokens, int t, int h, int w) {
    if (tokens.rows != t * h * w) throw ShapeError("grid_of: token count mismatch");
    TokenGrid x(t, h, w, tokens.cols);
    std::memcpy(x.data.data(), tokens.data.data(), x.size() * sizeof(float));
    return x;
}

}  // namespace stmix
