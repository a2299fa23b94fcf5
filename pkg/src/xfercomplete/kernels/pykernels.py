"""Pure-numpy implementations of the training hot kernels.

Semantically identical to the compiled versions in ``_ckernels.pyx`` (up to
float summation order); selected automatically when the extension is not
built, or explicitly via ``XFER_KERNELS=numpy``.
"""

from __future__ import annotations

import numpy as np


def causal_softmax(scores: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the last axis with a causal mask.

    ``scores`` has shape (B, H, T, T); entry (.., q, k) for k > q is treated
    as -inf. Returns a new array of attention probabilities.
    """
    b, h, t, t2 = scores.shape
    assert t == t2
    mask = np.triu(np.ones((t, t), dtype=bool), k=1)
    s = np.where(mask, -np.inf, scores)
    s = s - s.max(axis=-1, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(axis=-1, keepdims=True)
    return s.astype(scores.dtype, copy=False)


def softmax_xent(logits: np.ndarray, targets: np.ndarray,
                 weights: np.ndarray) -> tuple[float, float, np.ndarray]:
    """Fused softmax + cross-entropy forward/backward over flattened rows.

    Returns (weighted loss sum, weight sum, dlogits) where dlogits is the
    gradient of the weighted SUM (caller normalizes by the weight sum).
    Rows with weight 0 contribute nothing and get zero gradient.
    """
    n, v = logits.shape
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    z = e.sum(axis=1, keepdims=True)
    p = e / z
    idx = np.arange(n)
    logp_t = (logits[idx, targets] - m[:, 0]) - np.log(z[:, 0])
    loss_sum = float(-(weights * logp_t).sum())
    dlogits = p * weights[:, None]
    dlogits[idx, targets] -= weights
    return loss_sum, float(weights.sum()), dlogits.astype(logits.dtype, copy=False)


_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def gelu_fwd(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """tanh-approximation GELU; returns (y, tanh_u) for reuse in backward."""
    u = x * x
    u *= _GELU_A
    u += 1.0
    u *= x
    u *= _GELU_C
    np.tanh(u, out=u)
    y = u + 1.0
    y *= x
    y *= 0.5
    return y, u


def gelu_bwd(dy: np.ndarray, x: np.ndarray, t: np.ndarray) -> np.ndarray:
    du = x * x
    du *= 3.0 * _GELU_A
    du += 1.0
    du *= _GELU_C
    sech2 = t * t
    np.subtract(1.0, sech2, out=sech2)
    du *= sech2
    du *= x
    du += 1.0
    du += t
    du *= 0.5
    du *= dy
    return du


def embedding_grad(dW: np.ndarray, ids: np.ndarray, dout: np.ndarray) -> None:
    """Scatter-add ``dout`` rows into ``dW`` at the given ids (in place)."""
    np.add.at(dW, ids, dout)


def adam_step(p: np.ndarray, g: np.ndarray, m: np.ndarray, v: np.ndarray,
              lr: float, beta1: float, beta2: float, eps: float, t: int) -> None:
    """One fused Adam update, in place on (p, m, v)."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * np.square(g)
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    p -= (lr / bc1) * m / (np.sqrt(v / bc2) + eps)
