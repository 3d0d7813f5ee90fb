from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


@dataclass(eq=False)
class KVBlock:
    """Keys and values of one scale in one layer, shaped ``(heads, side**2, head_dim)``.

    ``keys``/``values`` may both be ``None`` for size-only simulation.
    """

    scale_index: int
    side: int
    keys: np.ndarray | None = None
    values: np.ndarray | None = None

    def __post_init__(self):
        if (self.keys is None) != (self.values is None):
            raise ValueError("keys and values must both be present or both absent")
        if self.keys is not None:
            if self.keys.shape != self.values.shape:
                raise ValueError(f"keys {self.keys.shape} and values {self.values.shape} differ")
            if self.keys.ndim != 3 or self.keys.shape[1] != self.side * self.side:
                raise ValueError(f"expected (heads, {self.side ** 2}, head_dim) keys, got {self.keys.shape}")

    @property
    def tokens(self) -> int:
        return self.side * self.side

    def __repr__(self):
        return f"KVBlock(r{self.scale_index}, {self.tokens} tokens)"


class DecisionKind(str, enum.Enum):
    CACHED = "cached"
    CACHED_WITH_EVICTION = "cached_with_eviction"
    SKIPPED_EXCEEDS_CMAX = "skipped_exceeds_cmax"
    SKIPPED_EXCEEDS_BUDGET = "skipped_exceeds_budget"
    EXPANDED_THEN_CACHED = "expanded_then_cached"


@dataclass(frozen=True)
class CacheDecision:
    """Outcome of one caching step, plus the cache state it left behind."""

    kind: DecisionKind
    evicted: tuple[int, ...] = ()
    sim_score: float | None = None
    verdict: str | None = None  # "demanding"/"efficient" when the guard was evaluated
    budget: int | None = None
    cached_scales: tuple[int, ...] = field(default=())
    cached_tokens: int = 0
