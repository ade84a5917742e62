import math

import numpy as np
import pytest

import stmix

CONFIG = """
t = 8
height = 16
width = 16
stem = 2
stages = repmixer:2:32,attention:1:64
embed_dim = 64
heads = 4
temporal_kernel = 3
spatial_kernel = 3
cpe_kernel = 7
ffn_ratio = 2
"""


def test_dwconv2d_identity_kernel():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 5, 5, 3), dtype=np.float32)
    k = np.zeros((3, 3, 3), dtype=np.float32)
    k[:, 1, 1] = 1.0
    bias = np.zeros(3, dtype=np.float32)
    y = stmix.dwconv2d(x, k, bias)
    np.testing.assert_array_equal(y, x)


def test_dwconv1d_matches_numpy_same_padding():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((6, 2, 2, 1), dtype=np.float32)
    k = np.array([[0.25, 0.5, -1.0]], dtype=np.float32)
    bias = np.array([0.125], dtype=np.float32)
    y = stmix.dwconv1d_temporal(x, k, bias)
    padded = np.concatenate([np.zeros_like(x[:1]), x, np.zeros_like(x[:1])])
    want = k[0, 0] * padded[:-2] + k[0, 1] * padded[1:-1] + k[0, 2] * padded[2:] + bias[0]
    np.testing.assert_allclose(y, want, atol=1e-6)


def test_fold_bn_then_skip():
    rng = np.random.default_rng(2)
    c = 4
    k = rng.standard_normal((c, 3, 3)).astype(np.float32)
    bias = rng.standard_normal(c).astype(np.float32)
    gamma = rng.uniform(0.5, 2.0, c).astype(np.float32)
    beta = rng.standard_normal(c).astype(np.float32)
    mean = rng.standard_normal(c).astype(np.float32)
    var = rng.uniform(0.5, 2.0, c).astype(np.float32)

    kf, bf = stmix.fold_bn_conv2d(k, bias, gamma, beta, mean, var)
    scale = gamma / np.sqrt(var + 1e-5)
    np.testing.assert_allclose(kf, k * scale[:, None, None], rtol=1e-6)

    ks, bs = stmix.fold_skip_conv2d(kf, bf)
    np.testing.assert_array_equal(bs, bf)
    delta = ks - kf
    np.testing.assert_allclose(delta[:, 1, 1], np.ones(c), atol=0)
    delta[:, 1, 1] = 0.0
    assert not delta.any()


def test_model_encode_and_reparameterize():
    m = stmix.Model.random(CONFIG, seed=3)
    assert not m.fused
    rng = np.random.default_rng(3)
    video = rng.uniform(-1, 1, (8, 16, 16, 3)).astype(np.float32)
    frames, emb = m.encode_video(video)
    assert frames.shape == (8, 64)
    assert emb.shape == (1, 64)
    assert math.isclose(float(np.linalg.norm(emb)), 1.0, abs_tol=1e-5)

    fused = m.reparameterized()
    assert fused.fused
    assert fused.param_count < m.param_count
    _, emb2 = fused.encode_video(video)
    np.testing.assert_allclose(emb2, emb, atol=1e-4)


def test_model_save_load(tmp_path):
    m = stmix.Model.random(CONFIG, seed=4)
    path = str(tmp_path / "model.stmx")
    stmix.save_model(m, path)
    back = stmix.load_model(path)
    video = np.random.default_rng(4).uniform(-1, 1, (8, 16, 16, 3)).astype(np.float32)
    np.testing.assert_array_equal(back.encode_video(video)[1], m.encode_video(video)[1])
    with pytest.raises(OSError):
        stmix.load_model(str(tmp_path / "missing.stmx"))


def test_vtc_loss_closed_form_and_grad_shapes():
    v = np.eye(2, dtype=np.float32)
    total, v2t, t2v = stmix.vtc_loss(v, v, tau=1.0)
    want = math.log(1.0 + math.exp(-1.0))
    assert math.isclose(total, want, abs_tol=1e-6)
    assert math.isclose(v2t, t2v, abs_tol=1e-7)

    dv, dt, dtau = stmix.vtc_loss_grad(v, v, tau=1.0)
    assert dv.shape == v.shape and dt.shape == v.shape
    assert isinstance(dtau, float)

    with pytest.raises(ValueError):
        stmix.vtc_loss(v, np.eye(3, dtype=np.float32))


def test_retrieval_metrics():
    e = np.eye(4, dtype=np.float32)
    sim = stmix.build_sim(e, e)
    np.testing.assert_allclose(sim, np.eye(4), atol=1e-6)
    assert stmix.recall_at_1(sim, [0, 1, 2, 3]) == 1.0
    assert stmix.recall_at_1(sim, [1, 0, 3, 2]) == 0.0

    cands = [e[:2].copy() if i % 2 == 0 else e[2:].copy() for i in range(4)]
    correct = [0, 0, 1, 1]
    acc = stmix.multiple_choice_accuracy(e, cands, correct)
    assert 0.0 <= acc <= 1.0
    assert stmix.video_prompt("a dog") == "a video of a dog"


def test_run_bench_smoke():
    r = stmix.run_bench("conv", t=1, h=2, w=2, c=4, layers=1, warmup=1, timed=10)
    assert r["module"] == "conv"
    assert len(r["samples_ms"]) == 10
    assert r["p5_ms"] <= r["median_ms"] <= r["p95_ms"]
