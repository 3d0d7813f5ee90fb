"""Random adaptive-cache walks with online invariant checks (shared by tests)."""
import random

from amskv.cachecore import DecisionKind, KVBlock, LayerCache, amskv_step
from amskv.schedule import BudgetSpec, ScaleSchedule, ThetaMode


def random_triple(rng: random.Random):
    k = rng.randint(2, 10)
    sides = tuple(sorted(rng.randint(1, 16) for _ in range(k)))
    sched = ScaleSchedule(sides)
    cds = rng.randint(0, min(2, k))
    total = sum(sched.tokens)
    # scale 1 has no predecessor to score, so it must never overflow C_min
    lo = max(sched.condensed_tokens(cds) + 1, sched.tokens[0])
    c_min = rng.randint(lo, max(lo, total))
    c_max = rng.randint(c_min, c_min + rng.choice([0, total // 3, total]))
    theta = rng.uniform(-10, 0)
    spec = BudgetSpec(c_min, c_max, cds, ThetaMode.absolute(theta))
    sims = [None] + [rng.uniform(-12, 0) for _ in range(k - 1)]
    return sched, spec, sims


def checked_walk(sched, spec, sims):
    """Run every scale through ``amskv_step`` and assert the invariants online.

    Returns the recorded steps in the trace-record layout.
    """
    cache = LayerCache(spec)
    steps = []
    expansions = 0
    condensed_seen = set()
    for i, (side, sim) in enumerate(zip(sched.sides, sims), start=1):
        before = list(cache.blocks)
        budget_before = cache.budget
        t = side * side
        d = amskv_step(cache, KVBlock(i, side), sim)
        after = cache.cached_scales
        # cached <= budget
        assert cache.tokens <= cache.budget
        # skip rules
        if t > spec.c_max:
            assert d.kind is DecisionKind.SKIPPED_EXCEEDS_CMAX
        elif sum(b.tokens for b in before) + t <= budget_before:
            assert d.kind is DecisionKind.CACHED
        else:
            if budget_before == spec.c_min:
                assert d.verdict == ("demanding" if sim < spec.theta.value else "efficient")
            else:
                assert d.verdict is None
            if t > cache.budget:
                assert d.kind is DecisionKind.SKIPPED_EXCEEDS_BUDGET
        if d.kind in (DecisionKind.SKIPPED_EXCEEDS_CMAX, DecisionKind.SKIPPED_EXCEEDS_BUDGET):
            assert after == tuple(b.scale_index for b in before)
        # monotone, single expansion guarded by C_min and a low similarity
        if cache.budget != budget_before:
            expansions += 1
            assert budget_before == spec.c_min and cache.budget == spec.c_max
            assert sim is not None and sim < spec.theta.value
            assert d.kind is DecisionKind.EXPANDED_THEN_CACHED
        assert expansions <= 1
        assert cache.budget in (spec.c_min, spec.c_max)
        # FIFO over non-condensed blocks, condensed never evicted
        order = [b.scale_index for b in before] + [i]
        non_condensed = [s for s in order if s > spec.cds_count]
        assert list(d.evicted) == non_condensed[: len(d.evicted)]
        assert condensed_seen <= set(after)
        condensed_seen |= {s for s in after if s <= spec.cds_count}
        steps.append({"layer": 0, "scale": i, "side": side, "similarity": sim, "verdict": d.verdict,
                      "decision": d.kind.value, "evicted": list(d.evicted), "budget": d.budget,
                      "cached_scales": list(d.cached_scales), "cached_tokens": d.cached_tokens})
    return steps
