#pragma once

#include <utility>
#include <vector>

#include "stmix/common.hpp"

namespace stmix {

// Dense activation tensor, row-major (t, h, w, c), 32-bit.
struct TokenGrid {
    int t = 0, h = 0, w = 0, c = 0;
    std::vector<float> data;

    TokenGrid() = default;
    TokenGrid(int t_, int h_, int w_, int c_);

    float& at(int ti, int i, int j, int ch) {
        return data[((static_cast<size_t>(ti) * h + i) * w + j) * c + ch];
    }
    const float& at(int ti, int i, int j, int ch) const {
        return data[((static_cast<size_t>(ti) * h + i) * w + j) * c + ch];
    }
    size_t size() const { return data.size(); }
    int tokens() const { return t * h * w; }
    bool same_shape(const TokenGrid& o) const {
        return t == o.t && h == o.h && w == o.w && c == o.c;
    }
    bool finite() const;
};

// Row-major matrix; doubles as the N x D embedding matrix.
struct Matrix {
    int rows = 0, cols = 0;
    std::vector<float> data;

    Matrix() = default;
    Matrix(int r, int c);

    float& at(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
    const float& at(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }
    bool finite() const;

    static Matrix identity(int n);
};

using EmbeddingMatrix = Matrix;

// Per-channel depthwise kernels. Weights are channel-major: w[ch*kh*kw + a*kw + b].
struct Kernel2d {
    int channels = 0, kh = 0, kw = 0;
    std::vector<float> w;

    Kernel2d() = default;
    Kernel2d(int channels_, int kh_, int kw_);
    int taps() const { return kh * kw; }
};

// Temporal kernel: w[ch*kt + a].
struct Kernel1d {
    int channels = 0, kt = 0;
    std::vector<float> w;

    Kernel1d() = default;
    Kernel1d(int channels_, int kt_);
    int taps() const { return kt; }
};

// Evaluation-mode batch-norm statistics, per channel.
struct BnStats {
    std::vector<float> gamma, beta, mean, var;
    float eps = 1e-5f;

    BnStats() = default;
    explicit BnStats(int channels, float eps_ = 1e-5f);
    int channels() const { return static_cast<int>(gamma.size()); }
    static BnStats identity(int channels);
};

// Depthwise 2D convolution, zero-padded "same", applied per frame.
TokenGrid dwconv2d(const TokenGrid& x, const Kernel2d& kernel, const std::vector<float>& bias);

// Depthwise 1D convolution along the frame axis, zero-padded "same".
TokenGrid dwconv1d_temporal(const TokenGrid& x, const Kernel1d& kernel,
                            const std::vector<float>& bias);

// Layout rearrangement used by the temporal convolution: (t,h,w,c) -> (h,w,c,t)
// so the frame axis becomes contiguous, and back.
std::vector<float> to_temporal_major(const TokenGrid& x);
TokenGrid from_temporal_major(const std::vector<float>& buf, int t, int h, int w, int c);

TokenGrid batchnorm(const TokenGrid& x, const BnStats& stats);

// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& m);

Matrix matmul(const Matrix& a, const Matrix& b);

float gelu(float x);
Matrix gelu(const Matrix& m);
TokenGrid gelu(const TokenGrid& x);

struct NormalizedRows {
    Matrix m;
    std::vector<int> zero_rows;  // indices left untouched (zero norm)
};
NormalizedRows l2_normalize_rows(const Matrix& e);

// Flatten the (t*h*w) x c token view of a grid and back. The grid layout is
// already token-major so these are cheap copies with shape bookkeeping.
Matrix tokens_of(const TokenGrid& x);
TokenGrid grid_of(const Matrix& tokens, int t, int h, int w);

}  // namespace stmix
