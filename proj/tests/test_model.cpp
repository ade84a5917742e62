#include <doctest.h>

#include <cmath>
#include <set>

#include "stmix/model.hpp"

using namespace stmix;

namespace {

TokenGrid random_video(const ModelConfig& cfg, Rng& rng) {
    TokenGrid v(cfg.t, cfg.h, cfg.w, 3);
    for (float& x : v.data) x = uniform(rng, -1.0f, 1.0f);
    return v;
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
    REQUIRE(a.size() == b.size());
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
    return m;
}

void set_identity_temporal(Model& m) {
    for (Block& b : m.blocks())
        if (b.kind == BlockKind::RepMixer)
            b.mixer.temporal = make_identity_temporal(b.mixer.channels(), 3, !m.fused());
}

}  // namespace

TEST_CASE("config: parse / canonical round trip, hash stability") {
    ModelConfig cfg = ModelConfig::tiny_desk();
    cfg.validate();
    ModelConfig back = ModelConfig::parse(cfg.canonical_text());
    CHECK(back.canonical_text() == cfg.canonical_text());
    CHECK(back.hash() == cfg.hash());
    ModelConfig other = cfg;
    other.heads = 2;
    CHECK(other.hash() != cfg.hash());
}

TEST_CASE("config: parse errors carry line numbers") {
    CHECK_THROWS_AS(ModelConfig::parse("t = 8\nbogus_key = 1\n"), ParseError);
    try {
        ModelConfig::parse("t = 8\nbogus_key = 1\n");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
    }
    CHECK_THROWS_AS(ModelConfig::parse("t = frog\n"), ParseError);
    CHECK_THROWS_AS(ModelConfig::parse("stages = repmixer:2\n"), ParseError);
    CHECK_THROWS_AS(ModelConfig::parse("stages = warp:1:8\n"), ParseError);
}

TEST_CASE("config: validation rules") {
    ModelConfig cfg = ModelConfig::tiny_desk();
    ModelConfig bad = cfg;
    bad.spatial_kernel = 4;
    CHECK_THROWS_AS(bad.validate(), ShapeError);
    bad = cfg;
    bad.stages = {{BlockKind::RepMixer, 1, 64}, {BlockKind::RepMixer, 1, 32}};
    CHECK_THROWS_AS(bad.validate(), ShapeError);  // channels must be non-decreasing
    bad = cfg;
    bad.stages = {{BlockKind::Attention, 1, 30}};
    bad.heads = 4;
    CHECK_THROWS_AS(bad.validate(), ShapeError);  // divisibility
    bad = cfg;
    bad.stem = 3;  // does not divide 16
    CHECK_THROWS_AS(bad.validate(), ShapeError);
    bad = cfg;
    bad.stages.clear();
    CHECK_THROWS_AS(bad.validate(), ShapeError);
}

TEST_CASE("encode_video: shapes, unit norm, determinism") {
    ModelConfig cfg = ModelConfig::tiny_desk();
    Model m = Model::random(cfg, 7);
    Rng rng(1);
    TokenGrid v = random_video(cfg, rng);
    Model::Encoded e = m.encode_video(v);
    CHECK(e.frames.rows == cfg.t);
    CHECK(e.frames.cols == cfg.embed_dim);
    CHECK(e.video.rows == 1);
    CHECK(e.video.cols == cfg.embed_dim);
    double norm = 0.0;
    for (float x : e.video.data) norm += double(x) * x;
    CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-5);

    Model::Encoded e2 = m.encode_video(v);
    CHECK(e.video.data == e2.video.data);

    TokenGrid wrong(cfg.t, cfg.h + 2, cfg.w, 3);
    CHECK_THROWS_AS(m.encode_video(wrong), ShapeError);
}

TEST_CASE("encode_video: time-constant input gives identical frame embeddings") {
    // TPE is zero-initialized and the temporal kernels are forced to identity,
    // so every frame goes through the same map.
    ModelConfig cfg = ModelConfig::tiny_desk();
    Model m = Model::random(cfg, 3);
    set_identity_temporal(m);
    Rng rng(2);
    TokenGrid frame(1, cfg.h, cfg.w, 3);
    for (float& x : frame.data) x = uniform(rng, -1.0f, 1.0f);
    TokenGrid v(cfg.t, cfg.h, cfg.w, 3);
    for (int t = 0; t < cfg.t; ++t)
        std::copy(frame.data.begin(), frame.data.end(),
                  v.data.begin() + static_cast<size_t>(t) * frame.data.size());
    Model::Encoded e = m.encode_video(v);
    for (int t = 1; t < cfg.t; ++t)
        for (int d = 0; d < cfg.embed_dim; ++d) CHECK(e.frames.at(t, d) == e.frames.at(0, d));
}

TEST_CASE("encode_video: frame permutation permutes frame embeddings, video invariant") {
    // Pure-conv config with identity temporal kernels: per-frame operator.
    ModelConfig cfg = ModelConfig::tiny_desk();
    cfg.stages = {{BlockKind::RepMixer, 2, 32}};
    Model m = Model::random(cfg, 5);
    set_identity_temporal(m);
    Rng rng(4);
    TokenGrid v = random_video(cfg, rng);
    TokenGrid vr(cfg.t, cfg.h, cfg.w, 3);
    const size_t fsz = v.data.size() / cfg.t;
    for (int t = 0; t < cfg.t; ++t)
        std::copy(v.data.begin() + t * fsz, v.data.begin() + (t + 1) * fsz,
                  vr.data.begin() + static_cast<size_t>(cfg.t - 1 - t) * fsz);
    Model::Encoded a = m.encode_video(v);
    Model::Encoded b = m.encode_video(vr);
    for (int t = 0; t < cfg.t; ++t)
        for (int d = 0; d < cfg.embed_dim; ++d)
            CHECK(b.frames.at(cfg.t - 1 - t, d) == a.frames.at(t, d));
    CHECK(max_abs_diff(a.video.data, b.video.data) < 1e-6);
}

TEST_CASE("temporal_pool: identity, cancellation, mean oracle, permutation invariance") {
    Matrix one(1, 4);
    for (int j = 0; j < 4; ++j) one.at(0, j) = float(j);
    Matrix p1 = temporal_pool(one);
    CHECK(p1.data == one.data);

    Matrix opp(2, 3);
    for (int j = 0; j < 3; ++j) {
        opp.at(0, j) = float(j + 1);
        opp.at(1, j) = -float(j + 1);
    }
    Matrix pz = temporal_pool(opp);
    for (float x : pz.data) CHECK(x == 0.0f);

    Rng rng(6);
    Matrix f(8, 16);
    for (float& x : f.data) x = uniform(rng, -2.0f, 2.0f);
    Matrix p = temporal_pool(f);
    for (int j = 0; j < 16; ++j) {
        double mean = 0.0;
        for (int i = 0; i < 8; ++i) mean += f.at(i, j);
        mean /= 8.0;
        CHECK(p.at(0, j) == doctest::Approx(mean).epsilon(1e-6));
        // convex hull: mean lies between column min and max
        float lo = f.at(0, j), hi = f.at(0, j);
        for (int i = 1; i < 8; ++i) {
            lo = std::min(lo, f.at(i, j));
            hi = std::max(hi, f.at(i, j));
        }
        CHECK(p.at(0, j) >= lo - 1e-6f);
        CHECK(p.at(0, j) <= hi + 1e-6f);
    }
    Matrix rev(8, 16);
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 16; ++j) rev.at(7 - i, j) = f.at(i, j);
    Matrix pr = temporal_pool(rev);
    CHECK(max_abs_diff(p.data, pr.data) < 1e-6);
}

TEST_CASE("whole-model reparameterization: equivalence, shrinkage, idempotence") {
    ModelConfig cfg = ModelConfig::tiny_desk();
    Model train = Model::random(cfg, 11);
    bool changed = false;
    Model fused = train.reparameterized(&changed);
    CHECK(changed);
    CHECK(fused.fused());
    CHECK(fused.param_count() < train.param_count());

    Rng rng(12);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        TokenGrid v = random_video(cfg, rng);
        Matrix a = train.encode_video(v).video;
        Matrix b = fused.encode_video(v).video;
        worst = std::max(worst, max_abs_diff(a.data, b.data));
    }
    CHECK(worst <= 1e-4);

    bool changed2 = true;
    Model again = fused.reparameterized(&changed2);
    CHECK_FALSE(changed2);
    CHECK(again.param_count() == fused.param_count());
}

TEST_CASE("flop closed forms") {
    CHECK(dwconv_flops(16, 9, 8, 14, 14) == 451584);
    CHECK(matmul_flops(3, 4, 5) == 120);
    // Attention score/value terms grow with tokens squared.
    const long f1 = attention_flops(100, 32);
    const long f2 = attention_flops(200, 32);
    const long quad1 = f1 - 2L * 4 * 100 * 32 * 32;
    const long quad2 = f2 - 2L * 4 * 200 * 32 * 32;
    CHECK(quad2 == 4 * quad1);
    CHECK(attention_flops(10, 8) == 2L * (100 * 8 + 100 * 8 + 4 * 10 * 64));

    ModelConfig cfg = ModelConfig::tiny_desk();
    Model m = Model::random(cfg, 0);
    CHECK(m.flop_count() > 0);
}

TEST_CASE("param_refs: unique names, counts add up, views are live") {
    ModelConfig cfg = ModelConfig::tiny_desk();
    Model m = Model::random(cfg, 13);
    std::vector<ParamRef> refs = m.param_refs();
    std::set<std::string> names;
    long total = 0;
    for (const ParamRef& r : refs) {
        CHECK(names.insert(r.name).second);
        size_t shape_count = 1;
        for (int d : r.shape) shape_count *= static_cast<size_t>(d);
        CHECK(shape_count == r.count);
        // bn_eps is serialized state but not a learnable parameter.
        if (r.name.find(".bn_eps") == std::string::npos) total += static_cast<long>(r.count);
    }
    CHECK(total == m.param_count());

    // Mutating through a ref changes the model output.
    Rng rng(14);
    TokenGrid v = random_video(cfg, rng);
    Matrix before = m.encode_video(v).video;
    for (ParamRef& r : refs)
        if (r.name == "proj.weight") r.data[0] += 0.5f;
    Matrix after = m.encode_video(v).video;
    CHECK(max_abs_diff(before.data, after.data) > 0.0);
}

TEST_CASE("trainable_refs: subsets select and never include BN statistics") {
    ModelConfig cfg = ModelConfig::tiny_desk();
    Model m = Model::random(cfg, 15);
    std::vector<ParamRef> proj = m.trainable_refs({"proj"});
    size_t n = 0;
    for (const ParamRef& r : proj) n += r.count;
    CHECK(n == size_t(cfg.embed_dim) * 64);  // bias-free head on C_last=64

    std::vector<ParamRef> all = m.trainable_refs({"all"});
    for (const ParamRef& r : all) CHECK(r.name.find(".bn_") == std::string::npos);

    CHECK_THROWS(m.trainable_refs({"nonexistent-subset"}));
    std::vector<ParamRef> tpe = m.trainable_refs({"tpe"});
    REQUIRE(tpe.size() == 1);
    CHECK(tpe[0].count == size_t(cfg.t) * 64);
}
