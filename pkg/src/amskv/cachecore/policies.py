"""Policy descriptions and the per-layer caches that realise them.

Every layer cache exposes ``step(block, similarity=None, fleet_scores=None)``
returning a :class:`CacheDecision`, ``context(block)`` returning the blocks
attended at this scale, plus ``blocks``, ``tokens`` and ``budget``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from ..errors import ConfigError, ProtocolError
from ..schedule import DEFAULT_RHO, BudgetSpec, ScaleSchedule, scale_groups
from .amskv import LayerCache, clru_evict, context_view
from .blocks import CacheDecision, DecisionKind, KVBlock

GROUPS = ("condensed", "local", "intermediate")


@dataclass(frozen=True)
class AmsKv:
    kind = "ams_kv"


@dataclass(frozen=True)
class FullCache:
    kind = "full_cache"


@dataclass(frozen=True)
class SlidingWindow:
    window: int
    kind = "sliding_window"

    def __post_init__(self):
        if self.window < 1:
            raise ConfigError(f"sliding window must be positive, got {self.window}")


@dataclass(frozen=True)
class SinkWindow:
    sink: int
    window: int
    kind = "sink_window"

    def __post_init__(self):
        if self.sink < 1 or self.window < 1:
            raise ConfigError(f"sink and window must be positive, got sink={self.sink} window={self.window}")


@dataclass(frozen=True)
class StaticAlloc:
    strategy: str = "s2"
    large_fraction: Fraction = DEFAULT_RHO
    kind = "static_alloc"

    def __post_init__(self):
        if self.strategy not in ("s1", "s2"):
            raise ConfigError(f"static allocation strategy must be 's1' or 's2', got {self.strategy!r}")
        frac = Fraction(self.large_fraction).limit_denominator(10**6)
        if not 0 <= frac <= 1:
            raise ConfigError(f"large_fraction must lie in [0, 1], got {self.large_fraction}")
        object.__setattr__(self, "large_fraction", frac)


@dataclass(frozen=True)
class Ablation:
    drop: str
    n_local: int = 2
    kind = "ablation"

    def __post_init__(self):
        if self.drop not in GROUPS:
            raise ConfigError(f"ablation must drop one of {GROUPS}, got {self.drop!r}")


POLICY_TYPES = {cls.kind: cls for cls in (AmsKv, FullCache, SlidingWindow, SinkWindow, StaticAlloc, Ablation)}


def _decision(cache, kind, evicted=(), sim=None):
    return CacheDecision(kind, tuple(evicted), sim, None, cache.budget, cache.cached_scales, cache.tokens)


class _BlockList:
    budget: int | None = None
    layer_id = 0

    def __init__(self):
        self.blocks: list[KVBlock] = []
        self.last_scale = 0

    @property
    def tokens(self):
        return sum(b.tokens for b in self.blocks)

    @property
    def cached_scales(self):
        return tuple(b.scale_index for b in self.blocks)

    def context(self, current):
        return context_view(self, current)

    def _arrive(self, block):
        if block.scale_index != self.last_scale + 1:
            raise ProtocolError(f"expected scale {self.last_scale + 1}, got {block.scale_index}")
        self.last_scale = block.scale_index


class FullCacheLayer(_BlockList):
    def __init__(self, layer_id=0):
        super().__init__()
        self.layer_id = layer_id

    def step(self, block, similarity=None, fleet_scores=None):
        self._arrive(block)
        self.blocks.append(block)
        return _decision(self, DecisionKind.CACHED, sim=similarity)


class SlidingWindowLayer(_BlockList):
    """Most recent ``window`` tokens, whole scales only, nothing pinned."""

    def __init__(self, window, sink=0, layer_id=0):
        super().__init__()
        self.window = window
        self.sink = sink
        self.pinned: set[int] = set()
        self.sink_open = sink > 0
        self.layer_id = layer_id
        self.budget = sink + window

    def step(self, block, similarity=None, fleet_scores=None):
        self._arrive(block)
        pinned_tokens = sum(b.tokens for b in self.blocks if b.scale_index in self.pinned)
        if self.sink_open and pinned_tokens + block.tokens <= self.sink:
            self.pinned.add(block.scale_index)
            self.blocks.append(block)
            return _decision(self, DecisionKind.CACHED, sim=similarity)
        self.sink_open = False
        self.blocks.append(block)
        evicted = []
        while sum(b.tokens for b in self.blocks if b.scale_index not in self.pinned) > self.window:
            victim = next(b for b in self.blocks if b.scale_index not in self.pinned)
            self.blocks.remove(victim)
            evicted.append(victim.scale_index)
        if block.scale_index in evicted:
            evicted.remove(block.scale_index)
            return _decision(self, DecisionKind.SKIPPED_EXCEEDS_BUDGET, evicted, similarity)
        kind = DecisionKind.CACHED_WITH_EVICTION if evicted else DecisionKind.CACHED
        return _decision(self, kind, evicted, similarity)


class StaticAllocLayer(_BlockList):
    """Fixed per-layer budget (``C_max`` for large layers, else ``C_min``) with CLRU."""

    def __init__(self, spec: BudgetSpec, large: bool, layer_id=0):
        super().__init__()
        self.spec = spec
        self.large = large
        self.layer_id = layer_id
        self.budget = spec.c_max if large else spec.c_min

    @property
    def condensed_count(self):
        return self.spec.cds_count

    def step(self, block, similarity=None, fleet_scores=None):
        self._arrive(block)
        if block.tokens > self.budget:
            return _decision(self, DecisionKind.SKIPPED_EXCEEDS_BUDGET, sim=similarity)
        self.blocks.append(block)
        evicted = clru_evict(self, self.budget)
        kind = DecisionKind.CACHED_WITH_EVICTION if evicted else DecisionKind.CACHED
        return _decision(self, kind, evicted, similarity)


class AblationLayer(FullCacheLayer):
    """Stores everything; hides one scale group from attention at read time."""

    def __init__(self, drop, schedule: ScaleSchedule, cds_count=2, n_local=2, layer_id=0):
        super().__init__(layer_id)
        self.drop = drop
        self.schedule = schedule
        self.cds_count = cds_count
        self.n_local = n_local

    def context(self, current):
        groups = scale_groups(self.schedule, current.scale_index, self.cds_count, self.n_local)
        hidden = getattr(groups, self.drop)
        return [b for b in self.blocks if b.scale_index not in hidden] + [current]


def static_large_layers(strategy: str, n_layers: int, large_fraction, layer_scores: Sequence[float] | None = None):
    """Indices of layers given the large budget.

    ``s1`` spreads ``ceil(fraction * n_layers)`` layers evenly over depth
    (midpoints of equal strata); ``s2`` picks the lowest-similarity layers,
    ties to the lower index.
    """
    m = math.ceil(Fraction(large_fraction) * n_layers)
    if m == 0:
        return []
    if strategy == "s1":
        return [(2 * k + 1) * n_layers // (2 * m) for k in range(m)]
    if strategy == "s2":
        if layer_scores is None or len(layer_scores) != n_layers:
            raise ConfigError("s2 allocation needs one similarity score per layer")
        return sorted(sorted(range(n_layers), key=lambda i: (layer_scores[i], i))[:m])
    raise ConfigError(f"unknown static allocation strategy {strategy!r}")


def make_layer_cache(policy, spec: BudgetSpec, schedule: ScaleSchedule, layer_id: int = 0,
                     large_layers: Sequence[int] = ()):
    if isinstance(policy, AmsKv):
        return LayerCache(spec, layer_id)
    if isinstance(policy, FullCache):
        return FullCacheLayer(layer_id)
    if isinstance(policy, SlidingWindow):
        return SlidingWindowLayer(policy.window, 0, layer_id)
    if isinstance(policy, SinkWindow):
        return SlidingWindowLayer(policy.window, policy.sink, layer_id)
    if isinstance(policy, StaticAlloc):
        return StaticAllocLayer(spec, layer_id in large_layers, layer_id)
    if isinstance(policy, Ablation):
        return AblationLayer(policy.drop, schedule, spec.cds_count, policy.n_local, layer_id)
    raise ConfigError(f"unknown policy {policy!r}")


def baseline_step(policy, state, block: KVBlock, similarity=None, fleet_scores=None) -> CacheDecision:
    """Advance a non-adaptive policy's layer state by one scale."""
    if isinstance(policy, AmsKv) or not isinstance(policy, tuple(POLICY_TYPES.values())):
        raise ConfigError(f"not a baseline policy: {policy!r}")
    return state.step(block, similarity, fleet_scores)


def policy_to_dict(policy) -> dict:
    d = {"kind": policy.kind}
    for name in getattr(policy, "__dataclass_fields__", {}):
        value = getattr(policy, name)
        d[name] = str(value) if isinstance(value, Fraction) else value
    return d


def policy_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind", None)
    if kind not in POLICY_TYPES:
        raise ConfigError(f"unknown policy kind {kind!r}; expected one of {sorted(POLICY_TYPES)}")
    cls = POLICY_TYPES[kind]
    allowed = set(cls.__dataclass_fields__)
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"policy {kind!r} does not accept {sorted(extra)}")
    if "large_fraction" in d:
        d["large_fraction"] = Fraction(d["large_fraction"])
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"policy {kind!r}: {exc}") from None
