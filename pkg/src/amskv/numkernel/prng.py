"""Counter-based SplitMix64 generator for reproducible weights.

Draw ``n`` (0-based) of a stream seeded with ``seed`` is the SplitMix64 mix of
``state = seed + (n + 1) * 0x9E3779B97F4A7C15 (mod 2**64)``::

    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z = z ^ (z >> 31)

which is exactly the n-th output of the sequential SplitMix64 generator
(Steele, Lea & Flood 2014), so any language with 64-bit wrapping integers can
reproduce the stream. Uniforms take the top 53 bits: ``(z >> 11) * 2**-53``.
Gaussians use Box-Muller on the draw pair ``(2i, 2i + 1)`` and keep the cosine
branch only.
"""
import math

import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TWO_POW_53 = 2.0**-53


def splitmix64(seed, n):
    """Return the first ``n`` raw 64-bit outputs for ``seed`` as uint64."""
    base = np.uint64(int(seed) % 2**64)
    counters = np.arange(1, n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = base + counters * GAMMA
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def uniform(seed, n):
    """``n`` doubles in [0, 1)."""
    return (splitmix64(seed, n) >> np.uint64(11)).astype(np.float64) * _TWO_POW_53


def gaussian(seed, n):
    """``n`` standard normal doubles."""
    raw = splitmix64(seed, 2 * n) >> np.uint64(11)
    u1 = (raw[0::2].astype(np.float64) + 1.0) * _TWO_POW_53  # (0, 1]
    u2 = raw[1::2].astype(np.float64) * _TWO_POW_53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)


def seeded_init(seed, shape, dist="uniform"):
    """Deterministic float64 array of ``shape`` drawn from ``dist``.

    ``dist`` is ``"uniform"`` (on [0, 1)) or ``"gaussian"`` (standard normal).
    """
    shape = tuple(int(s) for s in np.atleast_1d(shape))
    if any(s < 0 for s in shape):
        raise ValueError(f"invalid shape {shape}")
    n = math.prod(shape)
    if dist == "uniform":
        flat = uniform(seed, n)
    elif dist == "gaussian":
        flat = gaussian(seed, n)
    else:
        raise ValueError(f"unknown distribution {dist!r}")
    return flat.reshape(shape)
