"""Block-scale attention, the full-context oracle, density and similarity analysis."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import numkernel as nk
from .cachecore.blocks import KVBlock
from .errors import CoverageError
from .numkernel import ShapeError
from .schedule import ScaleSchedule


@dataclass(frozen=True)
class AttentionSlice:
    """Attention weights from the queries of scale ``from_scale`` onto the keys of ``to_scale``."""

    from_scale: int
    to_scale: int
    head: int
    weights: np.ndarray  # (T_from, T_to)


def _concat(context: Sequence[KVBlock]):
    if not context:
        raise ShapeError("attention context is empty")
    keys = np.concatenate([b.keys for b in context], axis=1)
    values = np.concatenate([b.values for b in context], axis=1)
    return keys, values


def block_attention(queries: np.ndarray, context: Sequence[KVBlock], return_slices: bool = False):
    """Attend ``queries`` (heads, T_j, head_dim) over every token of ``context``.

    No mask is applied: tokens of the current scale see each other and every
    cached scale. Returns ``(outputs, slices)``; ``slices`` is ``None`` unless
    requested, in which case the weights are materialised per (head, scale).
    """
    keys, values = _concat(context)
    if queries.shape[-1] != keys.shape[-1]:
        raise ShapeError(f"head_dim mismatch: queries {queries.shape[-1]} vs keys {keys.shape[-1]}")
    if not return_slices:
        return nk.attention(queries, keys, values), None

    scale = math.sqrt(queries.shape[-1])
    heads = queries.shape[0]
    out = np.empty((heads, queries.shape[1], values.shape[-1]))
    slices = []
    from_scale = context[-1].scale_index
    bounds = np.cumsum([0] + [b.tokens for b in context])
    for h in range(heads):
        probs = nk.softmax_rows(nk.matmul(queries[h], keys[h].T) / scale)
        out[h] = nk.matmul(probs, values[h])
        for b, lo, hi in zip(context, bounds[:-1], bounds[1:]):
            slices.append(AttentionSlice(from_scale, b.scale_index, h, probs[:, lo:hi].copy()))
    return out, slices


def full_context_oracle(history: Sequence[KVBlock], queries: np.ndarray) -> np.ndarray:
    """Attention with every scale up to and including the current one (``history[-1]``)."""
    return block_attention(queries, history)[0]


@dataclass(frozen=True)
class DensityTable:
    """Attention density per (head, source scale) when generating ``target``."""

    target: int
    schedule: ScaleSchedule
    entries: dict  # (head, scale) -> density

    @property
    def heads(self):
        return sorted({h for h, _ in self.entries})

    def mass(self, head: int) -> float:
        """Total attention mass ``sum_i T_i * d_i``; equals ``T_target`` when conserved."""
        t = self.schedule.tokens
        return sum(t[i - 1] * d for (h, i), d in self.entries.items() if h == head)

    def rows(self):
        t = self.schedule.tokens
        for (h, i), d in sorted(self.entries.items()):
            yield {"head": h, "scale": i, "value": d, "mass": t[i - 1] * d,
                   "head_mass": self.mass(h), "expected_mass": t[self.target - 1]}


def attention_density(slices: Sequence[AttentionSlice], schedule: ScaleSchedule, target: int | None = None) -> DensityTable:
    """``d_{i<-j} = (1 / T_i) * sum of A^(j->i)`` for every head and source scale ``i <= j``."""
    if not slices:
        raise CoverageError("no attention slices given")
    if target is None:
        target = slices[0].from_scale
    sums: dict = {}
    for s in slices:
        if s.from_scale != target:
            continue
        sums[(s.head, s.to_scale)] = sums.get((s.head, s.to_scale), 0.0) + float(np.sum(s.weights))
    heads = {h for h, _ in sums}
    missing = [(h, i) for h in sorted(heads) for i in range(1, target + 1) if (h, i) not in sums]
    if missing:
        raise CoverageError(f"missing attention slices for (head, scale) {missing}")
    t = schedule.tokens
    return DensityTable(target, schedule, {(h, i): v / t[i - 1] for (h, i), v in sums.items()})


class Similarity(NamedTuple):
    score: float  # -||k_curr - resize(k_prev)||_2 over all heads jointly
    rms: float  # score / sqrt(element count)
    per_head: tuple


def upsample_keys(k_prev: np.ndarray, side_prev: int, side_curr: int) -> np.ndarray:
    """Resize per-head keys ``(heads, side_prev**2, d)`` onto a ``side_curr`` grid."""
    heads, _, d = k_prev.shape
    grid = k_prev.transpose(1, 0, 2).reshape(side_prev, side_prev, heads * d)
    up = nk.bilinear_resize(grid, side_curr, side_curr)
    return up.reshape(side_curr * side_curr, heads, d).transpose(1, 0, 2)


def inter_scale_similarity(k_curr: np.ndarray, side_curr: int, k_prev: np.ndarray, side_prev: int) -> Similarity:
    """Negative l2 distance between scale-i keys and bilinearly upsampled scale-(i-1) keys."""
    if k_curr.shape[0] != k_prev.shape[0] or k_curr.shape[2] != k_prev.shape[2]:
        raise ShapeError(f"key shapes disagree on heads/head_dim: {k_curr.shape} vs {k_prev.shape}")
    if k_curr.shape[1] != side_curr**2 or k_prev.shape[1] != side_prev**2:
        raise ShapeError("key token counts do not match the given sides")
    diff = k_curr - upsample_keys(k_prev, side_prev, side_curr)
    score = -float(np.sqrt(np.sum(diff * diff)))
    per_head = tuple(-float(np.sqrt(np.sum(d * d))) for d in diff)
    return Similarity(score, score / math.sqrt(diff.size), per_head)


@dataclass(frozen=True)
class FidelityReport:
    scales: tuple
    rel_error: tuple
    cosine: tuple

    @property
    def mean_rel_error(self) -> float:
        return float(np.mean(self.rel_error)) if self.rel_error else 0.0

    @property
    def mean_cosine(self) -> float:
        return float(np.mean(self.cosine)) if self.cosine else 1.0

    def rows(self):
        for s, e, c in zip(self.scales, self.rel_error, self.cosine):
            yield {"scale": s, "rel_error": e, "cosine": c}


def compare_outputs(output: np.ndarray, oracle: np.ndarray) -> tuple[float, float]:
    """Relative l2 error and cosine similarity of ``output`` against ``oracle``."""
    a = np.asarray(output, dtype=np.float64).ravel()
    b = np.asarray(oracle, dtype=np.float64).ravel()
    if np.array_equal(a, b):
        return 0.0, 1.0
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    err = float(np.linalg.norm(a - b) / nb) if nb > 0 else float(np.linalg.norm(a - b))
    cos = float(np.clip(a @ b / (na * nb), -1.0, 1.0)) if na > 0 and nb > 0 else 0.0
    return err, cos


def fidelity_report(outputs: Sequence[np.ndarray], oracle: Sequence[np.ndarray], scales=None) -> FidelityReport:
    scales = tuple(scales) if scales is not None else tuple(range(1, len(outputs) + 1))
    pairs = [compare_outputs(a, b) for a, b in zip(outputs, oracle)]
    return FidelityReport(scales, tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))
