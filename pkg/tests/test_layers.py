import math

import numpy as np
import pytest

from lastraj.errors import ArgumentError
from lastraj.nn import autodiff as ad
from lastraj.nn.autodiff import Tensor
from lastraj.nn.layers import (
    ParamSet,
    add_attention,
    add_lstm,
    attention_fuse,
    bilstm_encode,
    gumbel_softmax,
    lstm_cell,
    spectral_normalize,
)
from lastraj.nn.optim import AdamState, adam_step

from gradcheck import max_rel_error


def sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def lstm_scalar(u, h, c, wu, wh, b):
    """Gate equations one unit at a time; blocks [i | f | o | g]."""
    n = len(h)
    h_new, c_new = [0.0] * n, [0.0] * n
    for k in range(n):
        pre = []
        for block in range(4):
            col = block * n + k
            s = b[col]
            for a in range(len(u)):
                s += u[a] * wu[a][col]
            for a in range(n):
                s += h[a] * wh[a][col]
            pre.append(s)
        i, f, o, g = sig(pre[0]), sig(pre[1]), sig(pre[2]), math.tanh(pre[3])
        c_new[k] = f * c[k] + i * g
        h_new[k] = o * math.tanh(c_new[k])
    return h_new, c_new


def lstm_params(rng, n_in, n_h, scale=1.0):
    return (Tensor(rng.normal(scale=scale, size=(n_in, 4 * n_h)), requires_grad=True),
            Tensor(rng.normal(scale=scale, size=(n_h, 4 * n_h)), requires_grad=True),
            Tensor(rng.normal(scale=scale, size=4 * n_h), requires_grad=True))


def test_lstm_zero_weights():
    c = np.array([[1.0, -2.0]])
    h_new, c_new = lstm_cell(np.ones((1, 3)), np.ones((1, 2)), c, Tensor(np.zeros((3, 8))),
                             Tensor(np.zeros((2, 8))), Tensor(np.zeros(8)))
    np.testing.assert_allclose(c_new.value, 0.5 * c)
    np.testing.assert_allclose(h_new.value, 0.5 * np.tanh(0.5 * c))


def test_lstm_all_zero():
    h_new, c_new = lstm_cell(np.zeros((1, 3)), np.zeros((1, 2)), np.zeros((1, 2)), Tensor(np.zeros((3, 8))),
                             Tensor(np.zeros((2, 8))), Tensor(np.zeros(8)))
    assert not h_new.value.any() and not c_new.value.any()


def test_lstm_matches_scalar_loop(rng):
    for _ in range(20):
        wu, wh, b = lstm_params(rng, 3, 3)
        u, h, c = rng.normal(size=3), rng.normal(size=3), rng.normal(size=3)
        h_new, c_new = lstm_cell(u[None], h[None], c[None], wu, wh, b)
        hs, cs = lstm_scalar(u, h, c, wu.value.tolist(), wh.value.tolist(), b.value.tolist())
        np.testing.assert_allclose(h_new.value[0], hs, atol=1e-12, rtol=0)
        np.testing.assert_allclose(c_new.value[0], cs, atol=1e-12, rtol=0)


def test_lstm_width_mismatch():
    with pytest.raises(ArgumentError):
        lstm_cell(np.zeros((1, 4)), np.zeros((1, 2)), np.zeros((1, 2)), Tensor(np.zeros((3, 8))),
                  Tensor(np.zeros((2, 8))), Tensor(np.zeros(8)))


def test_lstm_gradients(rng):
    for _ in range(50):
        n_in, n_h = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        wu, wh, b = lstm_params(rng, n_in, n_h)
        u = Tensor(rng.normal(size=(2, n_in)), requires_grad=True)
        h = Tensor(rng.normal(size=(2, n_h)), requires_grad=True)
        c = Tensor(rng.normal(size=(2, n_h)), requires_grad=True)
        w_out = rng.normal(size=(2, n_h))

        def build():
            h1, c1 = lstm_cell(u, h, c, wu, wh, b)
            h2, c2 = lstm_cell(u, h1, c1, wu, wh, b)
            return ad.tsum(ad.mul(h2, w_out)) + ad.tsum(ad.mul(c2, w_out))

        assert max_rel_error(build, [u, h, c, wu, wh, b]) <= 1e-4


def attention_params(rng, width):
    p = ParamSet()
    add_attention(p, "attn", width, rng)
    return p


def attention_scalar(groups, p, slope=0.2):
    proj = []
    for name, g in zip(("store", "neighbor", "mall"), groups):
        w, b = p[f"attn.{name}.w"].value, p[f"attn.{name}.b"].value
        proj.append([max(0.0, sum(g[a] * w[a][k] for a in range(len(g))) + b[k]) for k in range(len(b))])
    v = p["attn.score"].value
    scores = []
    for e in proj:
        s = sum(e[k] * v[k] for k in range(len(v)))
        scores.append(s if s > 0 else slope * s)
    top = max(scores)
    ex = [math.exp(s - top) for s in scores]
    alpha = [e / sum(ex) for e in ex]
    return [sum(alpha[j] * proj[j][k] for j in range(3)) for k in range(len(v))], alpha


def test_attention_identical_groups(rng):
    p = attention_params(rng, 4)
    for name in ("neighbor", "mall"):
        p[f"attn.{name}.w"].value = p["attn.store.w"].value.copy()
        p[f"attn.{name}.b"].value = p["attn.store.b"].value.copy()
    x = rng.normal(size=(5, 4))
    fused = attention_fuse(x, x, x, p)
    expect = np.maximum(x @ p["attn.store.w"].value + p["attn.store.b"].value, 0)
    np.testing.assert_allclose(fused.value, expect, atol=1e-12)


def test_attention_zero_score_is_mean(rng):
    p = attention_params(rng, 3)
    p["attn.score"].value[:] = 0
    groups = [rng.normal(size=(2, 3)) for _ in range(3)]
    fused = attention_fuse(*groups, p)
    proj = [np.maximum(g @ p[f"attn.{n}.w"].value + p[f"attn.{n}.b"].value, 0)
            for g, n in zip(groups, ("store", "neighbor", "mall"))]
    np.testing.assert_allclose(fused.value, sum(proj) / 3, atol=1e-12)


def test_attention_matches_scalar(rng):
    from lastraj.nn.layers import attention_weights

    for _ in range(20):
        p = attention_params(rng, 3)
        groups = [rng.normal(size=3) for _ in range(3)]
        fused = attention_fuse(*(g[None] for g in groups), p)
        expect, alpha = attention_scalar(groups, p)
        np.testing.assert_allclose(fused.value[0], expect, atol=1e-12)
        stacked = ad.stack([ad.relu(ad.linear(g[None], p[f"attn.{n}.w"], p[f"attn.{n}.b"]))
                            for g, n in zip(groups, ("store", "neighbor", "mall"))], axis=-2)
        weights = attention_weights(stacked, p["attn.score"]).value[0]
        assert np.all(weights >= 0) and abs(weights.sum() - 1) <= 1e-12
        np.testing.assert_allclose(weights, alpha, atol=1e-12)


def test_attention_width_mismatch(rng):
    p = attention_params(rng, 3)
    with pytest.raises(ArgumentError):
        attention_fuse(np.zeros((1, 3)), np.zeros((1, 2)), np.zeros((1, 3)), p)


def test_attention_gradients(rng):
    for _ in range(50):
        p = attention_params(rng, 3)
        groups = [Tensor(rng.normal(size=(2, 3)), requires_grad=True) for _ in range(3)]
        w_out = rng.normal(size=(2, 3))
        build = lambda: ad.tsum(ad.mul(attention_fuse(*groups, p), w_out))
        assert max_rel_error(build, groups + list(p)) <= 1e-4


def test_gumbel_dominant_logit(rng):
    logits = np.full(6, -50.0)
    logits[4] = 50.0
    for tau in (0.1, 1.0, 5.0):
        _, hard = gumbel_softmax(logits[None].repeat(100, 0), tau, rng)
        assert np.all(hard == 4)


def test_gumbel_simplex(rng):
    logits = rng.normal(size=(10_000, 7)) * 3
    soft, _ = gumbel_softmax(logits, 0.3, rng)
    assert np.all(soft.value >= 0)
    assert np.max(np.abs(soft.value.sum(axis=1) - 1)) <= 1e-9


def test_gumbel_max_frequencies(rng):
    probs = np.array([0.2, 0.3, 0.5])
    draws = 100_000
    _, hard = gumbel_softmax(np.tile(np.log(probs), (draws, 1)), 1.0, rng)
    counts = np.bincount(hard, minlength=3)
    sigma = np.sqrt(draws * probs * (1 - probs))
    assert np.all(np.abs(counts - draws * probs) <= 3 * sigma)


def test_gumbel_bad_temperature(rng):
    with pytest.raises(ArgumentError):
        gumbel_softmax(np.zeros(3), 0.0, rng)


def test_gumbel_gradients(rng):
    for _ in range(50):
        logits = Tensor(rng.normal(size=(2, 5)), requires_grad=True)
        noise = -np.log(-np.log(rng.random((2, 5))))
        tau = float(rng.uniform(0.2, 2.0))
        w = rng.normal(size=(2, 5))
        build = lambda: ad.tsum(ad.mul(gumbel_softmax(logits, tau, noise=noise)[0], w))
        assert max_rel_error(build, [logits]) <= 1e-4


def bilstm_params(rng, n_in, n_h, n_ctx, scale=0.5):
    p = ParamSet()
    add_lstm(p, "disc.fwd", n_in, n_h, rng)
    add_lstm(p, "disc.bwd", n_in, n_h, rng)
    p.add("disc.out.w", rng.normal(scale=scale, size=(2 * n_h + n_ctx, 1)))
    p.add("disc.out.b", rng.normal(scale=scale, size=1))
    for t in p:
        t.value = rng.normal(scale=scale, size=t.shape)
    return p


def bilstm_scalar(seq, ctx, p):
    def run(prefix, order):
        n_h = p[f"{prefix}.w_h"].shape[0]
        h, c = [0.0] * n_h, [0.0] * n_h
        args = [p[f"{prefix}.{k}"].value.tolist() for k in ("w_u", "w_h", "b")]
        for t in order:
            h, c = lstm_scalar(seq[t], h, c, *args)
        return h

    fwd = run("disc.fwd", range(len(seq)))
    bwd = run("disc.bwd", reversed(range(len(seq))))
    feats = fwd + bwd + list(ctx)
    w = p["disc.out.w"].value[:, 0]
    raw = sum(f * wk for f, wk in zip(feats, w)) + p["disc.out.b"].value[0]
    return feats, sig(raw)


def test_bilstm_zero_weights(rng):
    p = bilstm_params(rng, 3, 2, 1)
    for t in p:
        t.value = np.zeros(t.shape)
    _, score = bilstm_encode(rng.normal(size=(2, 4, 3)), [4, 1], rng.normal(size=(2, 1)), p)
    np.testing.assert_allclose(score.value, 0.5)
    p["disc.out.b"].value[:] = 1.3
    _, score = bilstm_encode(rng.normal(size=(2, 4, 3)), [4, 1], rng.normal(size=(2, 1)), p)
    np.testing.assert_allclose(score.value, sig(1.3))


def test_bilstm_matches_scalar(rng):
    for _ in range(20):
        p = bilstm_params(rng, 3, 2, 2)
        seq, ctx = rng.normal(size=(2, 3)), rng.normal(size=2)
        feats, score = bilstm_encode(seq[None], [2], ctx[None], p)
        f_ref, s_ref = bilstm_scalar(seq, ctx, p)
        np.testing.assert_allclose(feats.value[0], f_ref, atol=1e-12)
        assert abs(score.value[0] - s_ref) <= 1e-12


def test_bilstm_variable_length_and_canary(rng):
    p = bilstm_params(rng, 3, 4, 1)
    seq = rng.normal(size=(3, 5, 3))
    lengths = np.array([1, 5, 3])
    ctx = rng.normal(size=(3, 1))
    feats, score = bilstm_encode(seq, lengths, ctx, p)
    assert np.all(np.isfinite(score.value)) and np.all((score.value > 0) & (score.value < 1))
    canary = seq.copy()
    for i, n in enumerate(lengths):
        canary[i, n:] = 1e6
    feats2, score2 = bilstm_encode(canary, lengths, ctx, p)
    np.testing.assert_array_equal(feats.value, feats2.value)
    for i, n in enumerate(lengths):
        f_ref, s_ref = bilstm_scalar(seq[i, :n], ctx[i], p)
        np.testing.assert_allclose(feats.value[i], f_ref, atol=1e-12)


def test_bilstm_empty_rejected(rng):
    p = bilstm_params(rng, 3, 2, 1)
    with pytest.raises(ArgumentError):
        bilstm_encode(np.zeros((1, 2, 3)), [0], np.zeros((1, 1)), p)


def test_bilstm_gradients(rng):
    for _ in range(50):
        p = bilstm_params(rng, 2, 2, 1)
        seq = Tensor(rng.normal(size=(2, 3, 2)), requires_grad=True)
        lengths = rng.integers(1, 4, size=2)
        ctx = rng.normal(size=(2, 1))
        w_feat = rng.normal(size=(2, 5))

        def build():
            feats, score = bilstm_encode(seq, lengths, ctx, p)
            return ad.tsum(ad.log(score)) + ad.tsum(ad.mul(feats, w_feat))

        assert max_rel_error(build, [seq] + list(p)) <= 1e-4


def test_spectral_examples(rng):
    out = spectral_normalize(np.diag([3.0, 1.0]), 50)
    np.testing.assert_allclose(out, np.diag([1.0, 1 / 3]), atol=1e-12)
    z = np.zeros((3, 2))
    np.testing.assert_array_equal(spectral_normalize(z, 5), z)
    with pytest.raises(ArgumentError):
        spectral_normalize(np.eye(2), 0)


def power_method_to_convergence(w):
    v = np.ones(w.shape[1])
    sigma = 0.0
    for _ in range(100_000):
        v = w.T @ (w @ v)
        v /= np.linalg.norm(v)
        new = np.linalg.norm(w @ v)
        if abs(new - sigma) <= 1e-15 * new:
            break
        sigma = new
    return new


def test_spectral_random(rng):
    for _ in range(20):
        w = rng.normal(size=(8, 8))
        out = spectral_normalize(w, 100)
        assert abs(power_method_to_convergence(out) - 1) <= 1e-3
        assert abs(np.linalg.norm(out, 2) - 1) <= 1e-3


def adam_scalar(p, g, m, v, t, lr, b1=0.5, b2=0.999, eps=1e-8):
    m = b1 * m + (1 - b1) * g
    v = b2 * v + (1 - b2) * g * g
    mh = m / (1 - b1**t)
    vh = v / (1 - b2**t)
    return p - lr * mh / (math.sqrt(vh) + eps), m, v


def test_adam_zero_gradient():
    new, _ = adam_step({"w": np.ones(3)}, {"w": np.zeros(3)}, AdamState())
    np.testing.assert_array_equal(new["w"], np.ones(3))


def test_adam_first_step_closed_form():
    g = np.array([0.3, -2.0, 5.0])
    new, _ = adam_step({"w": np.zeros(3)}, {"w": g}, AdamState(), lr=1e-4)
    np.testing.assert_allclose(new["w"], -1e-4 * g / (np.abs(g) + 1e-8), rtol=1e-12)


def test_adam_shape_mismatch():
    with pytest.raises(ArgumentError):
        adam_step({"w": np.zeros(3)}, {"w": np.zeros(2)}, AdamState())


def test_adam_quadratic_matches_scalar(rng):
    target = rng.normal(size=4)
    p = {"w": np.zeros(4)}
    state = AdamState()
    ref = [(0.0, 0.0, 0.0) for _ in range(4)]
    losses = []
    for t in range(1, 101):
        g = 2 * (p["w"] - target)
        losses.append(float(np.sum((p["w"] - target) ** 2)))
        p, state = adam_step(p, {"w": g}, state, lr=0.01)
        ref = [adam_scalar(pk, gk, mk, vk, t, 0.01) for (pk, mk, vk), gk in zip(ref, g)]
    np.testing.assert_allclose(p["w"], [r[0] for r in ref], atol=1e-10)
    assert np.all(np.diff(losses[5:]) < 0)
