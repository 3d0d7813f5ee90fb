"""Dense float64 kernels shared by the attention engine and the toy model.

Matrices are 2-D ``numpy.ndarray`` (row-major, float64); spatial maps are
``(h, w, d)`` arrays. Validation lives here; the arithmetic is delegated to a
backend chosen at import time:

* ``compiled`` -- the Cython extension ``_ckernels`` (used when importable)
* ``python``   -- the NumPy module ``_reference``

Set ``AMSKV_BACKEND=python`` (or ``compiled``) to force one. ``use_backend``
switches at runtime, which the tests and benchmark rely on.
"""
import os
from contextlib import contextmanager

import numpy as np

from . import _reference
from .prng import seeded_init

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class NumericError(ValueError):
    """Non-finite values where finite ones are required."""


def available_backends():
    names = ["python"]
    if _ckernels is not None:
        names.append("compiled")
    return names


def _resolve(name):
    if name == "auto":
        return _ckernels if _ckernels is not None else _reference
    if name == "python":
        return _reference
    if name == "compiled":
        if _ckernels is None:
            raise RuntimeError("compiled kernels requested but amskv.numkernel._ckernels is not built")
        return _ckernels
    raise ValueError(f"unknown backend {name!r}")


_backend = _resolve(os.environ.get("AMSKV_BACKEND", "auto"))


def backend_name():
    return _backend.NAME


def set_backend(name):
    global _backend
    _backend = _resolve(name)


@contextmanager
def use_backend(name):
    global _backend
    saved = _backend
    _backend = _resolve(name)
    try:
        yield
    finally:
        _backend = saved


def _as2d(x, what):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"{what} must be 2-D, got shape {x.shape}")
    return x


def _check_finite(x, what):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{what} contains non-finite values")


def matmul(a, b):
    a = _as2d(a, "a")
    b = _as2d(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return _backend.matmul(a, b)


def softmax_rows(m, temperature=1.0):
    """Row-wise softmax of ``m / temperature``, stabilised by the row max."""
    m = _as2d(m, "m")
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    _check_finite(m, "softmax input")
    if m.shape[1] == 0:
        raise ShapeError("softmax over zero columns")
    return _backend.softmax_rows(m, float(temperature))


def bilinear_resize(src, target_h, target_w):
    """Align-corners bilinear resize of an ``(h, w, d)`` map, per channel.

    Output pixel ``(i, j)`` samples source coordinate
    ``(i * (h - 1) / (target_h - 1), j * (w - 1) / (target_w - 1))``; a
    target side of 1 samples coordinate 0.
    """
    src = np.ascontiguousarray(src, dtype=np.float64)
    if src.ndim != 3 or min(src.shape) < 1:
        raise ShapeError(f"source map must be (h, w, d) with positive sides, got {src.shape}")
    if target_h < 1 or target_w < 1:
        raise ShapeError(f"target size must be positive, got {target_h}x{target_w}")
    return _backend.bilinear_resize(src, int(target_h), int(target_w))


def attention(q, k, v):
    """Per-head ``softmax(q k^T / sqrt(d)) v`` for ``(heads, tokens, d)`` arrays."""
    q = np.ascontiguousarray(q, dtype=np.float64)
    k = np.ascontiguousarray(k, dtype=np.float64)
    v = np.ascontiguousarray(v, dtype=np.float64)
    if q.ndim != 3 or k.ndim != 3 or v.ndim != 3:
        raise ShapeError("attention operands must be (heads, tokens, dim)")
    if q.shape[0] != k.shape[0] or k.shape[:2] != v.shape[:2]:
        raise ShapeError(f"head/token mismatch: q{q.shape} k{k.shape} v{v.shape}")
    if q.shape[2] != k.shape[2]:
        raise ShapeError(f"head_dim mismatch: queries {q.shape[2]} vs keys {k.shape[2]}")
    if k.shape[1] == 0:
        raise ShapeError("attention over an empty context")
    return _backend.attention(q, k, v)


def l2_norm(x):
    return float(np.sqrt(np.sum(np.square(np.asarray(x, dtype=np.float64)))))


def identity(n):
    return np.eye(n, dtype=np.float64)


__all__ = [
    "NumericError",
    "ShapeError",
    "attention",
    "available_backends",
    "backend_name",
    "bilinear_resize",
    "identity",
    "l2_norm",
    "matmul",
    "seeded_init",
    "set_backend",
    "softmax_rows",
    "use_backend",
]
