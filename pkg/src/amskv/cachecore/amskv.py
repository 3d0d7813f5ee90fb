"""Per-layer adaptive multi-scale caching with condensed-FIFO (CLRU) eviction."""
from __future__ import annotations

import math
from typing import Sequence

from ..errors import ConfigError, InvariantViolation, ProtocolError
from ..schedule import BudgetSpec
from .blocks import CacheDecision, DecisionKind, KVBlock


def classify_layer(sim_score: float, spec: BudgetSpec, fleet_scores: Sequence[float] | None = None,
                   layer_id: int | None = None) -> str:
    """Return ``"demanding"`` or ``"efficient"`` for one layer's similarity score.

    In quantile mode the lowest ``ceil(rho * n_layers)`` scores of the fleet
    are demanding; ties go to the lower layer index.
    """
    theta = spec.theta
    if theta.kind == "absolute":
        return "demanding" if sim_score < theta.value else "efficient"
    if fleet_scores is None:
        raise ConfigError("quantile classification needs the scores of every layer at this scale")
    scores = list(fleet_scores)
    if layer_id is None:
        layer_id = scores.index(sim_score)
    elif scores[layer_id] != sim_score:
        raise ConfigError(f"layer {layer_id} score {sim_score} does not match fleet entry {scores[layer_id]}")
    n_demanding = math.ceil(theta.value * len(scores))
    ranked = sorted(range(len(scores)), key=lambda i: (scores[i], i))
    return "demanding" if layer_id in ranked[:n_demanding] else "efficient"


class LayerCache:
    """One layer's cache under the adaptive policy.

    Starts cache-efficient with budget ``C_min``; may expand once to ``C_max``
    when an overflow coincides with a demanding similarity verdict.
    """

    def __init__(self, spec: BudgetSpec, layer_id: int = 0):
        self.spec = spec
        self.layer_id = layer_id
        self.blocks: list[KVBlock] = []
        self.budget = spec.c_min
        self.demanding = False
        self.expanded_at: int | None = None
        self.last_scale = 0

    @property
    def condensed_count(self) -> int:
        return self.spec.cds_count

    @property
    def tokens(self) -> int:
        return sum(b.tokens for b in self.blocks)

    @property
    def cached_scales(self) -> tuple[int, ...]:
        return tuple(b.scale_index for b in self.blocks)

    def context(self, current: KVBlock) -> list[KVBlock]:
        return context_view(self, current)

    def step(self, block, similarity=None, fleet_scores=None) -> CacheDecision:
        return amskv_step(self, block, similarity, fleet_scores)

    def _decision(self, kind, evicted=(), sim=None, verdict=None):
        return CacheDecision(kind, tuple(evicted), sim, verdict, self.budget, self.cached_scales, self.tokens)


def context_view(cache, current: KVBlock) -> list[KVBlock]:
    """Cached blocks in insertion order followed by the block being generated.

    The cache is read before this step's update, so the current block always
    takes part in attention whether or not it ends up cached.
    """
    return [*cache.blocks, current]


def clru_evict(cache, budget: int) -> list[int]:
    """Drop the oldest non-condensed blocks until the cache fits ``budget``."""
    cds = cache.condensed_count
    pinned = sum(b.tokens for b in cache.blocks if b.scale_index <= cds)
    if pinned > budget:
        raise InvariantViolation("condensed scales fit within budget", f"{pinned} pinned tokens > budget {budget}")
    evicted = []
    size = cache.tokens
    i = 0
    while size > budget:
        while cache.blocks[i].scale_index <= cds:
            i += 1
        victim = cache.blocks.pop(i)
        evicted.append(victim.scale_index)
        size -= victim.tokens
    return evicted


def amskv_step(cache: LayerCache, block: KVBlock, similarity: float | None = None,
               fleet_scores: Sequence[float] | None = None) -> CacheDecision:
    """Offer ``block`` to ``cache``; returns the branch taken.

    ``similarity`` is the layer's inter-scale key similarity for this scale;
    it is only consulted when the cache overflows while the budget is still
    ``C_min``. ``fleet_scores`` (every layer's score at this scale) is needed
    in quantile threshold mode.
    """
    spec = cache.spec
    if block.scale_index != cache.last_scale + 1:
        raise ProtocolError(
            f"layer {cache.layer_id}: expected scale {cache.last_scale + 1}, got {block.scale_index}"
        )
    cache.last_scale = block.scale_index
    sim = None if similarity is None else float(similarity)
    if block.tokens > spec.c_max:
        return cache._decision(DecisionKind.SKIPPED_EXCEEDS_CMAX, sim=sim)

    cache.blocks.append(block)
    if cache.tokens <= cache.budget:
        decision = cache._decision(DecisionKind.CACHED, sim=sim)
    else:
        verdict = None
        expanded = False
        if cache.budget == spec.c_min:
            if sim is None:
                raise ProtocolError(
                    f"layer {cache.layer_id}: similarity required at scale {block.scale_index} (cache overflow)"
                )
            verdict = classify_layer(sim, spec, fleet_scores, cache.layer_id)
            if verdict == "demanding" and spec.c_max > spec.c_min:
                cache.budget = spec.c_max
                cache.demanding = True
                cache.expanded_at = block.scale_index
                expanded = True
        if block.tokens > cache.budget:
            cache.blocks.pop()
            kind = DecisionKind.SKIPPED_EXCEEDS_BUDGET
            evicted = ()
        else:
            evicted = clru_evict(cache, cache.budget)
            kind = DecisionKind.EXPANDED_THEN_CACHED if expanded else DecisionKind.CACHED_WITH_EVICTION
        decision = cache._decision(kind, evicted, sim, verdict)

    if cache.tokens > cache.budget:
        raise InvariantViolation("cached tokens <= budget", f"layer {cache.layer_id}: {cache.tokens} > {cache.budget}")
    return decision
