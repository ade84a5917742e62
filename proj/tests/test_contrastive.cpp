#include <doctest.h>

#include <cmath>
#include <vector>

#include "stmix/contrastive.hpp"

using namespace stmix;

namespace {

Matrix random_matrix(int r, int c, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
    Matrix m(r, c);
    for (float& v : m.data) v = uniform(rng, lo, hi);
    return m;
}

// Independent double-precision reference for the symmetric InfoNCE loss.
double oracle_vtc_loss(const std::vector<double>& v, const std::vector<double>& t, int n, int d,
                       double tau) {
    auto sim = [&](int i, int j) {
        double dot = 0.0, nv = 0.0, nt = 0.0;
        for (int k = 0; k < d; ++k) {
            dot += v[i * d + k] * t[j * d + k];
            nv += v[i * d + k] * v[i * d + k];
            nt += t[j * d + k] * t[j * d + k];
        }
        return dot / std::sqrt(nv * nt);
    };
    double v2t = 0.0, t2v = 0.0;
    for (int i = 0; i < n; ++i) {
        double zv = 0.0, zt = 0.0;
        for (int j = 0; j < n; ++j) {
            zv += std::exp(sim(i, j) / tau);
            zt += std::exp(sim(j, i) / tau);
        }
        v2t += -std::log(std::exp(sim(i, i) / tau) / zv);
        t2v += -std::log(std::exp(sim(i, i) / tau) / zt);
    }
    return (v2t / n + t2v / n) / 2.0;
}

std::vector<double> to_double(const Matrix& m) {
    return std::vector<double>(m.data.begin(), m.data.end());
}

}  // namespace

TEST_CASE("vtc_loss: single pair has zero loss and zero gradients") {
    VTCBatch b;
    b.v = Matrix(1, 4);
    b.t = Matrix(1, 4);
    b.v.at(0, 0) = 2.0f;
    b.t.at(0, 1) = -3.0f;
    b.tau = 0.5f;
    VTCLoss l = vtc_loss(b);
    CHECK(l.total == doctest::Approx(0.0).epsilon(1e-7));
    CHECK(l.v2t == doctest::Approx(0.0).epsilon(1e-7));
    VTCGrad g = vtc_loss_grad(b);
    for (float x : g.dv.data) CHECK(std::abs(x) < 1e-6f);
    for (float x : g.dt.data) CHECK(std::abs(x) < 1e-6f);
    CHECK(std::abs(g.dtau) < 1e-6f);
}

TEST_CASE("vtc_loss: two orthonormal pairs at tau=1 give log(1+e^-1)") {
    VTCBatch b;
    b.v = Matrix::identity(2);
    b.t = Matrix::identity(2);
    b.tau = 1.0f;
    VTCLoss l = vtc_loss(b);
    const double expected = std::log(1.0 + std::exp(-1.0));  // 0.31326168...
    CHECK(l.total == doctest::Approx(expected).epsilon(1e-6));
    CHECK(l.v2t == doctest::Approx(expected).epsilon(1e-6));
    CHECK(l.t2v == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("vtc_loss: matches double oracle, non-negative, pair-permutation invariant") {
    Rng rng(1);
    for (int trial = 0; trial < 10; ++trial) {
        const int n = 2 + static_cast<int>(rng() % 6);
        const int d = 3 + static_cast<int>(rng() % 12);
        VTCBatch b;
        b.v = random_matrix(n, d, rng);
        b.t = random_matrix(n, d, rng);
        b.tau = uniform(rng, 0.05f, 2.0f);
        VTCLoss l = vtc_loss(b);
        CHECK(l.v2t >= 0.0f);
        CHECK(l.t2v >= 0.0f);
        const double ref = oracle_vtc_loss(to_double(b.v), to_double(b.t), n, d, b.tau);
        CHECK(l.total == doctest::Approx(ref).epsilon(1e-5));

        // Applying the same row permutation to both sides keeps every pair
        // intact, so the loss cannot change.
        VTCBatch p = b;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) {
                p.v.at(i, j) = b.v.at((i + 1) % n, j);
                p.t.at(i, j) = b.t.at((i + 1) % n, j);
            }
        CHECK(vtc_loss(p).total == doctest::Approx(l.total).epsilon(1e-6));
    }
}

TEST_CASE("vtc_loss: invariant to positive row scaling, symmetric under v/t swap") {
    Rng rng(2);
    VTCBatch b;
    b.v = random_matrix(5, 8, rng);
    b.t = random_matrix(5, 8, rng);
    b.tau = 0.3f;
    VTCLoss l = vtc_loss(b);

    VTCBatch scaled = b;
    for (int i = 0; i < 5; ++i) {
        const float sv = 0.1f + 3.0f * float(i);
        for (int j = 0; j < 8; ++j) scaled.v.at(i, j) *= sv;
    }
    CHECK(vtc_loss(scaled).total == doctest::Approx(l.total).epsilon(1e-5));

    VTCBatch swapped;
    swapped.v = b.t;
    swapped.t = b.v;
    swapped.tau = b.tau;
    VTCLoss ls = vtc_loss(swapped);
    CHECK(ls.total == doctest::Approx(l.total).epsilon(1e-6));
    CHECK(ls.v2t == doctest::Approx(l.t2v).epsilon(1e-6));
    CHECK(ls.t2v == doctest::Approx(l.v2t).epsilon(1e-6));
}

TEST_CASE("vtc_loss_grad matches central finite differences of the double oracle") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 2 + static_cast<int>(rng() % 7);
        const int d = 2 + static_cast<int>(rng() % 15);
        VTCBatch b;
        b.v = random_matrix(n, d, rng);
        b.t = random_matrix(n, d, rng);
        b.tau = uniform(rng, 0.1f, 1.5f);
        VTCGrad g = vtc_loss_grad(b);

        std::vector<double> dv = to_double(b.v), dt = to_double(b.t);
        const double h = 1e-5;
        double worst_rel = 0.0;
        auto rel = [&](double analytic, double fd) {
            return std::abs(analytic - fd) / std::max(1e-4, std::abs(fd));
        };
        for (int i = 0; i < n * d; ++i) {
            std::vector<double> hi = dv, lo = dv;
            hi[i] += h;
            lo[i] -= h;
            const double fd = (oracle_vtc_loss(hi, dt, n, d, b.tau) -
                               oracle_vtc_loss(lo, dt, n, d, b.tau)) /
                              (2.0 * h);
            worst_rel = std::max(worst_rel, rel(g.dv.data[i], fd));
        }
        for (int i = 0; i < n * d; ++i) {
            std::vector<double> hi = dt, lo = dt;
            hi[i] += h;
            lo[i] -= h;
            const double fd = (oracle_vtc_loss(dv, hi, n, d, b.tau) -
                               oracle_vtc_loss(dv, lo, n, d, b.tau)) /
                              (2.0 * h);
            worst_rel = std::max(worst_rel, rel(g.dt.data[i], fd));
        }
        const double fd_tau = (oracle_vtc_loss(dv, dt, n, d, double(b.tau) + h) -
                               oracle_vtc_loss(dv, dt, n, d, double(b.tau) - h)) /
                              (2.0 * h);
        worst_rel = std::max(worst_rel, rel(g.dtau, fd_tau));
        CHECK(worst_rel <= 1e-4);
    }
}

TEST_CASE("vtc_loss: rejects malformed batches") {
    Rng rng(4);
    VTCBatch b;
    b.v = random_matrix(3, 4, rng);
    b.t = random_matrix(3, 4, rng);

    VTCBatch bad = b;
    bad.tau = 0.0f;
    CHECK_THROWS_AS(vtc_loss(bad), ShapeError);
    bad.tau = -1.0f;
    CHECK_THROWS_AS(vtc_loss(bad), ShapeError);

    bad = b;
    bad.t = random_matrix(2, 4, rng);
    CHECK_THROWS_AS(vtc_loss(bad), ShapeError);  // batch size mismatch
    bad = b;
    bad.t = random_matrix(3, 5, rng);
    CHECK_THROWS_AS(vtc_loss(bad), ShapeError);  // dim mismatch

    bad = b;
    for (int j = 0; j < 4; ++j) bad.v.at(1, j) = 0.0f;
    CHECK_THROWS_AS(vtc_loss(bad), ShapeError);  // zero-norm row
    CHECK_THROWS_AS(vtc_loss_grad(bad), ShapeError);
}

TEST_CASE("synthetic dataset: counts, orthonormal texts, time-constant clips") {
    ModelConfig cfg = ModelConfig::tiny_desk();
    const int k = 4, per = 3, hold = 2;
    SyntheticDataset data = make_synthetic_dataset(cfg, k, per, hold, 11);

    CHECK(data.train_clips.size() == size_t(k * per));
    CHECK(data.holdout_clips.size() == size_t(k * hold));
    CHECK(data.train_texts.rows == k * per);
    CHECK(data.holdout_texts.rows == k * hold);
    CHECK(data.train_texts.cols == cfg.embed_dim);
    REQUIRE(data.train_cluster.size() == size_t(k * per));

    // Text rows within a cluster repeat its center; centers are orthonormal.
    for (int a = 0; a < k * per; ++a)
        for (int b = 0; b < k * per; ++b) {
            double dot = 0.0;
            for (int j = 0; j < cfg.embed_dim; ++j)
                dot += double(data.train_texts.at(a, j)) * data.train_texts.at(b, j);
            const double want = data.train_cluster[a] == data.train_cluster[b] ? 1.0 : 0.0;
            CHECK(dot == doctest::Approx(want).epsilon(1e-4));
        }

    // Clips are time-constant: every frame equals frame zero.
    for (const TokenGrid& clip : data.train_clips) {
        CHECK(clip.t == cfg.t);
        const size_t fsz = clip.data.size() / clip.t;
        for (int t = 1; t < clip.t; ++t)
            for (size_t i = 0; i < fsz; ++i) CHECK(clip.data[t * fsz + i] == clip.data[i]);
    }

    // Deterministic in the seed, different across seeds.
    SyntheticDataset again = make_synthetic_dataset(cfg, k, per, hold, 11);
    CHECK(again.train_clips[0].data == data.train_clips[0].data);
    SyntheticDataset other = make_synthetic_dataset(cfg, k, per, hold, 12);
    CHECK(other.train_clips[0].data != data.train_clips[0].data);

    CHECK_THROWS_AS(make_synthetic_dataset(cfg, 0, 1, 1, 0), ShapeError);
    CHECK_THROWS_AS(make_synthetic_dataset(cfg, cfg.embed_dim + 1, 1, 1, 0), ShapeError);
}

TEST_CASE("train_toy: zero learning rate leaves the loss flat") {
    ModelConfig cfg = ModelConfig::tiny_desk();
    Model m = Model::random(cfg, 21);
    SyntheticDataset data = make_synthetic_dataset(cfg, 2, 3, 1, 21);
    TrainConfig tc;
    tc.lr = 0.0f;
    tc.epochs = 3;
    tc.batch = 64;  // one full batch per epoch
    tc.seed = 21;
    TrainResult r = train_toy(m, data, tc);
    CHECK(r.final_loss == doctest::Approx(r.initial_loss).epsilon(1e-6));
    for (const TrainRecord& rec : r.log)
        CHECK(rec.loss == doctest::Approx(r.initial_loss).epsilon(1e-6));
}

TEST_CASE("train_toy: deterministic and loss-decreasing on a small problem") {
    ModelConfig cfg = ModelConfig::tiny_desk();
    SyntheticDataset data = make_synthetic_dataset(cfg, 4, 4, 1, 5);
    TrainConfig tc;
    tc.epochs = 10;
    tc.batch = 8;
    tc.seed = 5;

    Model a = Model::random(cfg, 31);
    TrainResult ra = train_toy(a, data, tc);
    CHECK(ra.final_loss < ra.initial_loss);
    CHECK(ra.tau > 0.0f);

    Model b = Model::random(cfg, 31);
    TrainResult rb = train_toy(b, data, tc);
    REQUIRE(ra.log.size() == rb.log.size());
    for (size_t i = 0; i < ra.log.size(); ++i) CHECK(ra.log[i].loss == rb.log[i].loss);
    CHECK(ra.holdout_t2v_r1 == rb.holdout_t2v_r1);
}

TEST_CASE("train_toy: configuration guards") {
    ModelConfig cfg = ModelConfig::tiny_desk();
    Model m = Model::random(cfg, 41);
    SyntheticDataset data = make_synthetic_dataset(cfg, 2, 2, 1, 41);

    TrainConfig tc;
    tc.lr = -1.0f;
    CHECK_THROWS_AS(train_toy(m, data, tc), std::invalid_argument);
    tc = TrainConfig{};
    tc.epochs = 0;
    CHECK_THROWS_AS(train_toy(m, data, tc), std::invalid_argument);
    tc = TrainConfig{};
    tc.tau0 = 0.0f;
    CHECK_THROWS_AS(train_toy(m, data, tc), std::invalid_argument);

    // The finite-difference budget refuses the full parameter set.
    tc = TrainConfig{};
    tc.subsets = {"all"};
    try {
        train_toy(m, data, tc);
        FAIL("expected budget rejection");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("4096") != std::string::npos);
    }
}
