#include "stmix/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "stmix/retrieval.hpp"

namespace stmix {

namespace {

void validate_batch(const VTCBatch& b) {
    if (b.v.rows != b.t.rows) throw ShapeError("vtc: video/text batch sizes differ");
    if (b.v.cols != b.t.cols) throw ShapeError("vtc: embedding dims differ");
    if (b.v.rows < 1) throw ShapeError("vtc: empty batch");
    if (!(b.tau > 0.0f)) throw ShapeError("vtc: tau must be positive");
}

Matrix normalize_strict(const Matrix& m, const char* side) {
    NormalizedRows n = l2_normalize_rows(m);
    if (!n.zero_rows.empty())
        throw ShapeError(std::string("vtc: zero-norm ") + side + " embedding row " +
                         std::to_string(n.zero_rows.front()));
    return n.m;
}

// Cosine matrix Z = nv * nt^T.
Matrix cosine_matrix(const Matrix& nv, const Matrix& nt) {
    Matrix ntt(nt.cols, nt.rows);
    for (int i = 0; i < nt.rows; ++i)
        for (int j = 0; j < nt.cols; ++j) ntt.at(j, i) = nt.at(i, j);
    return matmul(nv, ntt);
}

float directional_loss(const Matrix& s, bool transpose) {
    const int n = s.rows;
    float total = 0.0f;
    for (int i = 0; i < n; ++i) {
        float mx = transpose ? s.at(0, i) : s.at(i, 0);
        for (int j = 1; j < n; ++j) {
            const float v = transpose ? s.at(j, i) : s.at(i, j);
            mx = std::max(mx, v);
        }
        float sum = 0.0f;
        for (int j = 0; j < n; ++j) {
            const float v = transpose ? s.at(j, i) : s.at(i, j);
            sum += std::exp(v - mx);
        }
        const float diag = s.at(i, i);
        total += std::log(sum) + mx - diag;
    }
    return total / static_cast<float>(n);
}

}  // namespace

VTCLoss vtc_loss(const VTCBatch& b) {
    validate_batch(b);
    Matrix nv = normalize_strict(b.v, "video");
    Matrix nt = normalize_strict(b.t, "text");
    Matrix z = cosine_matrix(nv, nt);
    Matrix s(z.rows, z.cols);
    const float inv_tau = 1.0f / b.tau;
    for (size_t i = 0; i < z.data.size(); ++i) s.data[i] = z.data[i] * inv_tau;
    VTCLoss out;
    out.v2t = directional_loss(s, false);
    out.t2v = directional_loss(s, true);
    out.total = 0.5f * (out.v2t + out.t2v);
    return out;
}

VTCGrad vtc_loss_grad(const VTCBatch& b, VTCLoss* loss_out) {
    validate_batch(b);
    const int n = b.v.rows, d = b.v.cols;
    Matrix nv = normalize_strict(b.v, "video");
    Matrix nt = normalize_strict(b.t, "text");
    Matrix z = cosine_matrix(nv, nt);
    Matrix s(n, n);
    const float inv_tau = 1.0f / b.tau;
    for (size_t i = 0; i < z.data.size(); ++i) s.data[i] = z.data[i] * inv_tau;

    if (loss_out) {
        loss_out->v2t = directional_loss(s, false);
        loss_out->t2v = directional_loss(s, true);
        loss_out->total = 0.5f * (loss_out->v2t + loss_out->t2v);
    }

    Matrix p = softmax_rows(s);
    Matrix st(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) st.at(i, j) = s.at(j, i);
    Matrix q = softmax_rows(st);

    // dL/dS, combining both directions with mean reduction.
    Matrix g(n, n);
    const float half_inv_n = 0.5f / static_cast<float>(n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            float v = p.at(i, j) + q.at(j, i);
            if (i == j) v -= 2.0f;
            g.at(i, j) = v * half_inv_n;
        }

    VTCGrad out;
    out.dtau = 0.0f;
    for (size_t i = 0; i < g.data.size(); ++i) out.dtau -= g.data[i] * s.data[i];
    out.dtau /= b.tau;

    // Through the 1/tau scaling: dL/dZ = G / tau.
    Matrix dnv(n, d), dnt(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const float gij = g.at(i, j) * inv_tau;
            for (int k = 0; k < d; ++k) {
                dnv.at(i, k) += gij * nt.at(j, k);
                dnt.at(j, k) += gij * nv.at(i, k);
            }
        }

    // Through the row normalization: dv = (g - (g . u) u) / |v|.
    auto through_norm = [d](const Matrix& raw, const Matrix& unit, const Matrix& grad_unit) {
        Matrix out(raw.rows, d);
        for (int i = 0; i < raw.rows; ++i) {
            float norm = 0.0f, dot = 0.0f;
            for (int k = 0; k < d; ++k) norm += raw.at(i, k) * raw.at(i, k);
            norm = std::sqrt(norm);
            for (int k = 0; k < d; ++k) dot += grad_unit.at(i, k) * unit.at(i, k);
            for (int k = 0; k < d; ++k)
                out.at(i, k) = (grad_unit.at(i, k) - dot * unit.at(i, k)) / norm;
        }
        return out;
    };
    out.dv = through_norm(b.v, nv, dnv);
    out.dt = through_norm(b.t, nt, dnt);
    return out;
}

SyntheticDataset make_synthetic_dataset(const ModelConfig& cfg, int clusters, int train_per_cluster,
                                        int holdout_per_cluster, std::uint64_t seed, float noise) {
    if (clusters < 1 || clusters > cfg.embed_dim)
        throw ShapeError("synthetic dataset: clusters must be in [1, embed_dim]");
    Rng rng(seed);
    std::normal_distribution<float> gauss(0.0f, noise);

    const int d = cfg.embed_dim;
    auto render = [&](const std::vector<float>& s) {
        TokenGrid clip(cfg.t, cfg.h, cfg.w, 3);
        for (int ti = 0; ti < cfg.t; ++ti)
            for (int i = 0; i < cfg.h; ++i)
                for (int j = 0; j < cfg.w; ++j)
                    for (int ch = 0; ch < 3; ++ch)
                        clip.at(ti, i, j, ch) = s[((i * cfg.w + j) * 3 + ch) % d];
        return clip;
    };

    // Random orthonormal centers (Gram-Schmidt over Gaussian draws) so the
    // cluster identity shows up in every rendered pixel, not a single slot.
    std::normal_distribution<float> unit_gauss(0.0f, 1.0f);
    std::vector<std::vector<float>> centers;
    for (int k = 0; k < clusters; ++k) {
        std::vector<float> c(d);
        for (float& v : c) v = unit_gauss(rng);
        for (const std::vector<float>& prev : centers) {
            float dot = 0.0f;
            for (int j = 0; j < d; ++j) dot += c[j] * prev[j];
            for (int j = 0; j < d; ++j) c[j] -= dot * prev[j];
        }
        float norm = 0.0f;
        for (float v : c) norm += v * v;
        norm = std::sqrt(norm);
        if (norm < 1e-3f) throw ShapeError("synthetic dataset: degenerate center draw");
        for (float& v : c) v /= norm;
        centers.push_back(std::move(c));
    }

    SyntheticDataset out;
    out.train_texts = Matrix(clusters * train_per_cluster, d);
    out.holdout_texts = Matrix(clusters * holdout_per_cluster, d);
    int tr = 0, ho = 0;
    for (int k = 0; k < clusters; ++k) {
        const std::vector<float>& center = centers[k];
        for (int r = 0; r < train_per_cluster + holdout_per_cluster; ++r) {
            std::vector<float> s = center;
            for (float& v : s) v += gauss(rng);
            if (r < train_per_cluster) {
                out.train_clips.push_back(render(s));
                for (int j = 0; j < d; ++j) out.train_texts.at(tr, j) = center[j];
                out.train_cluster.push_back(k);
                ++tr;
            } else {
                out.holdout_clips.push_back(render(s));
                for (int j = 0; j < d; ++j) out.holdout_texts.at(ho, j) = center[j];
                out.holdout_cluster.push_back(k);
                ++ho;
            }
        }
    }
    return out;
}

TrainResult train_toy(Model& model, const SyntheticDataset& data, const TrainConfig& cfg) {
    if (cfg.lr < 0.0f || cfg.epochs < 1 || cfg.batch < 1 || !(cfg.tau0 > 0.0f) ||
        cfg.fd_step <= 0.0f)
        throw std::invalid_argument("train_toy: bad training configuration");
    if (data.train_clips.empty() || data.holdout_clips.empty())
        throw std::invalid_argument("train_toy: empty dataset");

    std::vector<ParamRef> refs = model.trainable_refs(cfg.subsets);
    size_t nparams = 0;
    for (const ParamRef& r : refs) nparams += r.count;
    if (nparams == 0) throw std::invalid_argument("train_toy: no trainable parameters selected");
    if (nparams > 4096)
        throw std::invalid_argument(
            "train_toy: " + std::to_string(nparams) +
            " trainable parameters exceed the finite-difference budget of 4096; "
            "shrink the config or pick a smaller subset");

    std::vector<float*> flat;
    flat.reserve(nparams);
    for (const ParamRef& r : refs)
        for (size_t i = 0; i < r.count; ++i) flat.push_back(r.data + i);

    // Backbone features are constant when only the projection head trains.
    bool head_only = true;
    for (const ParamRef& r : refs)
        if (r.name.rfind("proj.", 0) != 0) head_only = false;

    const int ntrain = static_cast<int>(data.train_clips.size());
    const int nhold = static_cast<int>(data.holdout_clips.size());
    const int clast = model.proj().rows;

    auto stack_features = [&](const std::vector<TokenGrid>& clips) {
        Matrix f(static_cast<int>(clips.size()), clast);
        for (size_t i = 0; i < clips.size(); ++i) {
            Matrix row = model.encode_features(clips[i]);
            for (int j = 0; j < clast; ++j) f.at(static_cast<int>(i), j) = row.at(0, j);
        }
        return f;
    };

    Matrix train_feats = stack_features(data.train_clips);

    float tau = std::clamp(cfg.tau0, 0.01f, 100.0f);
    float log_tau = std::log(tau);

    auto batch_of = [&](const std::vector<int>& idx, const Matrix& feats) {
        VTCBatch b;
        Matrix sub(static_cast<int>(idx.size()), clast);
        b.t = Matrix(static_cast<int>(idx.size()), data.train_texts.cols);
        for (size_t i = 0; i < idx.size(); ++i) {
            for (int j = 0; j < clast; ++j) sub.at(static_cast<int>(i), j) = feats.at(idx[i], j);
            for (int j = 0; j < b.t.cols; ++j)
                b.t.at(static_cast<int>(i), j) = data.train_texts.at(idx[i], j);
        }
        b.v = matmul(sub, model.proj());
        b.tau = tau;
        return b;
    };

    auto eval_loss = [&](const std::vector<int>& idx) {
        if (head_only) return vtc_loss(batch_of(idx, train_feats)).total;
        Matrix feats(static_cast<int>(idx.size()), clast);
        VTCBatch b;
        b.t = Matrix(static_cast<int>(idx.size()), data.train_texts.cols);
        for (size_t i = 0; i < idx.size(); ++i) {
            Matrix row = model.encode_features(data.train_clips[idx[i]]);
            for (int j = 0; j < clast; ++j) feats.at(static_cast<int>(i), j) = row.at(0, j);
            for (int j = 0; j < b.t.cols; ++j)
                b.t.at(static_cast<int>(i), j) = data.train_texts.at(idx[i], j);
        }
        b.v = matmul(feats, model.proj());
        b.tau = tau;
        return vtc_loss(b).total;
    };

    std::vector<int> all_train(ntrain);
    std::iota(all_train.begin(), all_train.end(), 0);

    auto holdout_r1 = [&]() {
        Matrix hfeats = stack_features(data.holdout_clips);
        Matrix hembs = model.project_features(hfeats);
        SimMatrix sim = build_sim(data.holdout_texts, hembs);  // T2V: text queries
        std::vector<int> gt(nhold);
        std::iota(gt.begin(), gt.end(), 0);
        return recall_at_1(sim, gt);
    };

    TrainResult res;
    res.initial_loss = eval_loss(all_train);

    const int steps_per_epoch = (ntrain + cfg.batch - 1) / cfg.batch;
    const int total_steps = cfg.epochs * steps_per_epoch;
    const int warmup_steps = std::max(1, static_cast<int>(cfg.warmup_frac * total_steps));

    Rng rng(cfg.seed);
    std::vector<int> order = all_train;
    std::vector<float> grad(nparams);
    // Adam moments; the feature covariance is badly conditioned (one dominant
    // common-mode direction), which plain SGD cannot descend in time.
    std::vector<float> m1(nparams, 0.0f), m2(nparams, 0.0f);
    constexpr float kBeta1 = 0.9f, kBeta2 = 0.999f, kAdamEps = 1e-8f;
    const float h = cfg.fd_step;
    int step = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (int b0 = 0; b0 < ntrain; b0 += cfg.batch) {
            ++step;
            // Linear warmup, then cosine decay to a tenth of the peak rate.
            float lr_t;
            if (step <= warmup_steps) {
                lr_t = cfg.lr * static_cast<float>(step) / static_cast<float>(warmup_steps);
            } else {
                const float prog = static_cast<float>(step - warmup_steps) /
                                   static_cast<float>(std::max(1, total_steps - warmup_steps));
                lr_t = cfg.lr * (0.55f + 0.45f * std::cos(3.14159265f * prog));
            }
            std::vector<int> idx(order.begin() + b0,
                                 order.begin() + std::min(ntrain, b0 + cfg.batch));

            for (size_t j = 0; j < nparams; ++j) {
                float* p = flat[j];
                const float orig = *p;
                *p = orig + h;
                const float lp = eval_loss(idx);
                *p = orig - h;
                const float lm = eval_loss(idx);
                *p = orig;
                grad[j] = (lp - lm) / (2.0f * h);
            }

            VTCBatch b = head_only ? batch_of(idx, train_feats) : VTCBatch{};
            if (!head_only) {
                Matrix feats(static_cast<int>(idx.size()), clast);
                b.t = Matrix(static_cast<int>(idx.size()), data.train_texts.cols);
                for (size_t i = 0; i < idx.size(); ++i) {
                    Matrix row = model.encode_features(data.train_clips[idx[i]]);
                    for (int j = 0; j < clast; ++j) feats.at(static_cast<int>(i), j) = row.at(0, j);
                    for (int j = 0; j < b.t.cols; ++j)
                        b.t.at(static_cast<int>(i), j) = data.train_texts.at(idx[i], j);
                }
                b.v = matmul(feats, model.proj());
                b.tau = tau;
            }
            VTCGrad vg = vtc_loss_grad(b);

            const float bc1 = 1.0f - std::pow(kBeta1, static_cast<float>(step));
            const float bc2 = 1.0f - std::pow(kBeta2, static_cast<float>(step));
            for (size_t j = 0; j < nparams; ++j) {
                m1[j] = kBeta1 * m1[j] + (1.0f - kBeta1) * grad[j];
                m2[j] = kBeta2 * m2[j] + (1.0f - kBeta2) * grad[j] * grad[j];
                *flat[j] -= lr_t * (m1[j] / bc1) / (std::sqrt(m2[j] / bc2) + kAdamEps);
            }
            log_tau -= lr_t * vg.dtau * tau;  // optimize in log-space
            tau = std::clamp(std::exp(log_tau), 0.01f, 100.0f);
            log_tau = std::log(tau);
        }
        res.log.push_back({step, eval_loss(all_train), holdout_r1()});
    }

    res.final_loss = res.log.back().loss;
    res.holdout_t2v_r1 = res.log.back().holdout_r1;
    res.tau = tau;

    if (!cfg.log_path.empty()) {
        std::ofstream f(cfg.log_path);
        if (!f) throw IOError("cannot open training log: " + cfg.log_path);
        f << "step,loss,r1\n";
        for (const TrainRecord& r : res.log) f << r.step << "," << r.loss << "," << r.holdout_r1 << "\n";
    }
    return res;
}

}  // namespace stmix
