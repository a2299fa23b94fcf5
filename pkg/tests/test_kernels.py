"""Backend equivalence and correctness of the hot kernels.

Each kernel is checked against a naive reference implementation written
here (independent of both backends), and the backends are checked against
each other at float tolerance.
"""

import numpy as np
import pytest

from xfercomplete import kernels

BACKENDS = kernels.available_backends()


def naive_causal_softmax(scores):
    b, h, t, _ = scores.shape
    out = np.zeros_like(scores, dtype=np.float64)
    for i in range(b):
        for j in range(h):
            for q in range(t):
                row = scores[i, j, q, :q + 1].astype(np.float64)
                e = np.exp(row - row.max())
                out[i, j, q, :q + 1] = e / e.sum()
    return out


def naive_xent(logits, targets, weights):
    n, v = logits.shape
    logits = logits.astype(np.float64)
    loss = 0.0
    dl = np.zeros((n, v))
    for i in range(n):
        row = logits[i] - logits[i].max()
        p = np.exp(row) / np.exp(row).sum()
        loss += -weights[i] * np.log(p[targets[i]])
        dl[i] = p * weights[i]
        dl[i, targets[i]] -= weights[i]
    return loss, float(weights.sum()), dl


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_causal_softmax_matches_naive(backend, dtype):
    k = kernels.get_backend(backend)
    rng = np.random.default_rng(0)
    scores = np.ascontiguousarray(rng.normal(size=(2, 3, 9, 9)).astype(dtype))
    got = k.causal_softmax(scores)
    want = naive_causal_softmax(scores)
    tol = 1e-5 if dtype == np.float32 else 1e-12
    assert np.allclose(got, want, atol=tol)
    # strictly zero above the diagonal, rows sum to one
    for q in range(9):
        assert np.all(got[..., q, q + 1:] == 0)
    assert np.allclose(got.sum(-1), 1.0, atol=tol)


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_softmax_xent_matches_naive(backend, dtype):
    k = kernels.get_backend(backend)
    rng = np.random.default_rng(1)
    logits = np.ascontiguousarray(rng.normal(size=(17, 23)).astype(dtype) * 3)
    targets = rng.integers(0, 23, size=17).astype(np.int64)
    weights = np.ascontiguousarray(
        (rng.random(17) > 0.3).astype(dtype))
    loss, wsum, dl = k.softmax_xent(logits, targets, weights)
    nloss, nwsum, ndl = naive_xent(logits, targets, weights)
    tol = 1e-4 if dtype == np.float32 else 1e-10
    assert abs(loss - nloss) < tol * max(1.0, abs(nloss))
    assert wsum == pytest.approx(nwsum)
    assert np.allclose(dl, ndl, atol=tol)


@pytest.mark.parametrize("backend", BACKENDS)
def test_gelu_matches_reference(backend):
    k = kernels.get_backend(backend)
    x = np.ascontiguousarray(
        np.random.default_rng(2).normal(size=(11, 7)).astype(np.float64) * 2)
    y, t = k.gelu_fwd(x)
    c, a = 0.7978845608028654, 0.044715
    want = 0.5 * x * (1 + np.tanh(c * (x + a * x ** 3)))
    assert np.allclose(y, want, atol=1e-9)
    # backward vs finite differences of the forward
    dy = np.ones_like(x)
    dx = k.gelu_bwd(np.ascontiguousarray(dy), x, t)
    eps = 1e-6
    fd = (k.gelu_fwd(np.ascontiguousarray(x + eps))[0]
          - k.gelu_fwd(np.ascontiguousarray(x - eps))[0]) / (2 * eps)
    assert np.allclose(dx, fd, atol=1e-6)


@pytest.mark.parametrize("backend", BACKENDS)
def test_embedding_grad_scatter_add(backend):
    k = kernels.get_backend(backend)
    dW = np.zeros((5, 3), dtype=np.float32)
    ids = np.array([0, 2, 2, 4], dtype=np.int64)
    dout = np.ascontiguousarray(np.arange(12, dtype=np.float32).reshape(4, 3))
    k.embedding_grad(dW, ids, dout)
    want = np.zeros((5, 3), dtype=np.float32)
    np.add.at(want, ids, dout)
    assert np.array_equal(dW, want)


@pytest.mark.parametrize("backend", BACKENDS)
def test_adam_first_step_closed_form(backend):
    k = kernels.get_backend(backend)
    p = np.array([1.0], dtype=np.float64)
    g = np.array([0.5], dtype=np.float64)
    m = np.zeros(1)
    v = np.zeros(1)
    lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
    k.adam_step(p, g, m, v, lr, b1, b2, eps, 1)
    # bias-corrected first step: mhat = g, vhat = g^2
    want = 1.0 - lr * 0.5 / (np.sqrt(0.25) + eps)
    assert abs(p[0] - want) < 1e-12


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled kernels not built")
def test_backends_agree():
    rng = np.random.default_rng(3)
    a = kernels.get_backend(BACKENDS[0])
    b = kernels.get_backend(BACKENDS[1])
    scores = np.ascontiguousarray(rng.normal(size=(2, 2, 16, 16)).astype(np.float32))
    assert np.allclose(a.causal_softmax(scores), b.causal_softmax(scores), atol=2e-6)
    logits = np.ascontiguousarray(rng.normal(size=(64, 101)).astype(np.float32))
    tg = rng.integers(0, 101, 64).astype(np.int64)
    w = np.ones(64, dtype=np.float32)
    la, _, dla = a.softmax_xent(logits, tg, w)
    lb, _, dlb = b.softmax_xent(logits, tg, w)
    assert abs(la - lb) < 1e-4
    assert np.allclose(dla, dlb, atol=2e-6)
