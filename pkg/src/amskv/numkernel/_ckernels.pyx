# cython: language_level=3
"""Compiled hot kernels. Same contracts as ``_reference``.

All loops run over float64 typed memoryviews; no fast-math, so results stay
deterministic for a given build.
"""
import numpy as np
from libc.math cimport exp, floor

NAME = "compiled"


def matmul(a, b):
    # a scalar triple loop cannot compete with BLAS; defer to it
    return np.matmul(a, b)


cdef void _softmax_inplace(double[:, ::1] m, double temperature) noexcept:
    cdef Py_ssize_t n = m.shape[0], c = m.shape[1]
    cdef Py_ssize_t i, j
    cdef double mx, s
    for i in range(n):
        mx = m[i, 0] / temperature
        for j in range(1, c):
            if m[i, j] / temperature > mx:
                mx = m[i, j] / temperature
        s = 0.0
        for j in range(c):
            m[i, j] = exp(m[i, j] / temperature - mx)
            s += m[i, j]
        for j in range(c):
            m[i, j] = m[i, j] / s


def softmax_rows(const double[:, ::1] m, double temperature):
    out = np.array(m, dtype=np.float64, order="C")
    _softmax_inplace(out, temperature)
    return out


cdef void _coord(Py_ssize_t idx, Py_ssize_t n_in, Py_ssize_t n_out,
                 Py_ssize_t* lo, Py_ssize_t* hi, double* frac) noexcept:
    cdef double pos
    if n_out == 1:
        pos = 0.0
    else:
        pos = <double>(idx * (n_in - 1)) / <double>(n_out - 1)
    lo[0] = <Py_ssize_t>floor(pos)
    if lo[0] > n_in - 1:
        lo[0] = n_in - 1
    hi[0] = lo[0] + 1
    if hi[0] > n_in - 1:
        hi[0] = n_in - 1
    frac[0] = pos - lo[0]


def bilinear_resize(const double[:, :, ::1] src, Py_ssize_t target_h, Py_ssize_t target_w):
    cdef Py_ssize_t h = src.shape[0], w = src.shape[1], d = src.shape[2]
    cdef Py_ssize_t i, j, c, y0, y1, x0, x1
    cdef double wy, wx, top, bottom
    out = np.empty((target_h, target_w, d), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    for i in range(target_h):
        _coord(i, h, target_h, &y0, &y1, &wy)
        for j in range(target_w):
            _coord(j, w, target_w, &x0, &x1, &wx)
            for c in range(d):
                top = src[y0, x0, c] + wx * (src[y0, x1, c] - src[y0, x0, c])
                bottom = src[y1, x0, c] + wx * (src[y1, x1, c] - src[y1, x0, c])
                o[i, j, c] = top + wy * (bottom - top)
    return out


def attention(q, k, v):
    """softmax(q k^T / sqrt(d)) v per head: BLAS products around an in-place softmax."""
    cdef Py_ssize_t h
    scores = np.matmul(q, k.transpose(0, 2, 1)) / np.sqrt(q.shape[2])
    for h in range(scores.shape[0]):
        _softmax_inplace(scores[h], 1.0)
    return np.matmul(scores, v)
