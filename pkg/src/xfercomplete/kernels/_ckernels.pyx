# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled training hot kernels.

Same contracts as ``pykernels``; see that module for documentation. Built
with -ffast-math so gcc vectorizes the exp/tanh loops; float32 inputs take
float32 libm paths.
"""

import numpy as np

cimport cython
cimport numpy as cnp
from libc.math cimport exp, expf, log, logf, sqrt, INFINITY

cnp.import_array()

ctypedef fused real:
    float
    double


cdef inline double _exp(double x) noexcept nogil:
    return exp(x)


cdef inline float _expf(float x) noexcept nogil:
    return expf(x)


def causal_softmax(real[:, :, :, ::1] scores):
    cdef Py_ssize_t b = scores.shape[0], h = scores.shape[1], t = scores.shape[2]
    out_np = np.empty((b, h, t, t), dtype=np.asarray(scores).dtype)
    cdef real[:, :, :, ::1] out = out_np
    cdef Py_ssize_t i, j, q, k
    cdef real m, s, val
    with nogil:
        for i in range(b):
            for j in range(h):
                for q in range(t):
                    m = scores[i, j, q, 0]
                    for k in range(1, q + 1):
                        val = scores[i, j, q, k]
                        if val > m:
                            m = val
                    s = 0.0
                    if real is float:
                        for k in range(q + 1):
                            val = _expf(scores[i, j, q, k] - m)
                            out[i, j, q, k] = val
                            s += val
                    else:
                        for k in range(q + 1):
                            val = _exp(scores[i, j, q, k] - m)
                            out[i, j, q, k] = val
                            s += val
                    s = 1.0 / s
                    for k in range(q + 1):
                        out[i, j, q, k] *= s
                    for k in range(q + 1, t):
                        out[i, j, q, k] = 0.0
    return out_np


def softmax_xent(real[:, ::1] logits, long long[::1] targets, real[::1] weights):
    cdef Py_ssize_t n = logits.shape[0], v = logits.shape[1]
    dl_np = np.empty((n, v), dtype=np.asarray(logits).dtype)
    cdef real[:, ::1] dl = dl_np
    cdef Py_ssize_t i, j
    cdef double m, z, loss_sum = 0.0, wsum = 0.0
    cdef double w
    cdef real e, zi
    cdef long long tgt
    with nogil:
        for i in range(n):
            w = weights[i]
            wsum += w
            tgt = targets[i]
            m = -INFINITY
            for j in range(v):
                if logits[i, j] > m:
                    m = logits[i, j]
            z = 0.0
            if real is float:
                for j in range(v):
                    e = _expf(logits[i, j] - <real> m)
                    dl[i, j] = e
                    z += e
            else:
                for j in range(v):
                    e = _exp(logits[i, j] - m)
                    dl[i, j] = e
                    z += e
            if w != 0.0:
                loss_sum += -w * ((logits[i, tgt] - m) - log(z))
            zi = <real> (w / z)
            for j in range(v):
                dl[i, j] *= zi
            dl[i, tgt] -= <real> w
    return loss_sum, wsum, dl_np


def gelu_fwd(real[:, ::1] x):
    """tanh-approximation GELU; returns (y, tanh_u) with tanh_u cached for backward."""
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    dt = np.asarray(x).dtype
    y_np = np.empty((n, d), dtype=dt)
    t_np = np.empty((n, d), dtype=dt)
    cdef real[:, ::1] y = y_np
    cdef real[:, ::1] t = t_np
    cdef Py_ssize_t i, j
    cdef real xi, u, e, th
    cdef real c = <real> 0.7978845608028654   # sqrt(2/pi)
    cdef real a = <real> 0.044715
    with nogil:
        for i in range(n):
            if real is float:
                for j in range(d):
                    xi = x[i, j]
                    u = c * (xi + a * xi * xi * xi)
                    e = _expf(<real> (-2.0) * u)
                    th = (<real> 1.0 - e) / (<real> 1.0 + e)
                    t[i, j] = th
                    y[i, j] = <real> 0.5 * xi * (<real> 1.0 + th)
            else:
                for j in range(d):
                    xi = x[i, j]
                    u = c * (xi + a * xi * xi * xi)
                    e = _exp(<real> (-2.0) * u)
                    th = (<real> 1.0 - e) / (<real> 1.0 + e)
                    t[i, j] = th
                    y[i, j] = <real> 0.5 * xi * (<real> 1.0 + th)
    return y_np, t_np


def gelu_bwd(real[:, ::1] dy, real[:, ::1] x, real[:, ::1] t):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    dx_np = np.empty((n, d), dtype=np.asarray(x).dtype)
    cdef real[:, ::1] dx = dx_np
    cdef Py_ssize_t i, j
    cdef real xi, th, du
    cdef real c = <real> 0.7978845608028654
    cdef real a3 = <real> (3.0 * 0.044715)
    with nogil:
        for i in range(n):
            for j in range(d):
                xi = x[i, j]
                th = t[i, j]
                du = c * (<real> 1.0 + a3 * xi * xi)
                dx[i, j] = dy[i, j] * (<real> 0.5 * (<real> 1.0 + th)
                                       + <real> 0.5 * xi * (<real> 1.0 - th * th) * du)
    return dx_np


def embedding_grad(real[:, ::1] dW, long long[::1] ids, real[:, ::1] dout):
    cdef Py_ssize_t n = ids.shape[0], d = dW.shape[1]
    cdef Py_ssize_t i, j
    cdef long long row
    with nogil:
        for i in range(n):
            row = ids[i]
            for j in range(d):
                dW[row, j] += dout[i, j]


def adam_step(real[::1] p, real[::1] g, real[::1] m, real[::1] v,
              double lr, double beta1, double beta2, double eps, long long t):
    cdef Py_ssize_t n = p.shape[0]
    cdef Py_ssize_t i
    cdef double bc1 = 1.0 - beta1 ** t
    cdef double bc2 = 1.0 - beta2 ** t
    cdef double gi, mi, vi
    with nogil:
        for i in range(n):
            gi = g[i]
            mi = beta1 * m[i] + (1.0 - beta1) * gi
            vi = beta2 * v[i] + (1.0 - beta2) * gi * gi
            m[i] = <real> mi
            v[i] = <real> vi
            p[i] -= <real> ((lr / bc1) * mi / (sqrt(vi / bc2) + eps))
