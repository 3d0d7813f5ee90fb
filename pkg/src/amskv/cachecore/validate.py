"""Post-hoc checker for recorded adaptive-cache steps."""
from __future__ import annotations

from typing import Mapping, Sequence

from ..schedule import BudgetSpec
from .amskv import LayerCache, amskv_step
from .blocks import KVBlock


def validate_steps(steps: Sequence[Mapping], spec: BudgetSpec,
                   fleet_by_scale: Mapping[int, Sequence[float]] | None = None) -> list[str]:
    """Check one layer's recorded steps against the caching rules.

    Each step maps ``scale``, ``side``, ``similarity``, ``decision``,
    ``evicted``, ``budget``, ``cached_scales`` and ``cached_tokens``. The
    steps are also replayed through :func:`amskv_step` from their recorded
    similarity, which must reproduce every decision. Returns violation
    messages, each prefixed with the invariant's name; empty means valid.
    """
    problems = []
    cds = spec.cds_count
    sizes: dict[int, int] = {}
    prev_scales: tuple[int, ...] = ()
    prev_budget = spec.c_min
    expansions = 0
    ever_cached_condensed: set[int] = set()
    replay = LayerCache(spec, layer_id=steps[0].get("layer", 0) if steps else 0)

    def bad(name, i, msg):
        problems.append(f"{name}: scale {i}: {msg}")

    for st in steps:
        i = st["scale"]
        t = st["side"] ** 2
        sizes[i] = t
        kind = st["decision"]
        budget = st["budget"]
        scales = tuple(st["cached_scales"])
        evicted = list(st["evicted"])

        if sum(sizes[s] for s in scales) != st["cached_tokens"]:
            bad("token accounting", i, f"cached_tokens {st['cached_tokens']} disagrees with scales {scales}")
        if st["cached_tokens"] > budget:
            bad("cached tokens <= budget", i, f"{st['cached_tokens']} > {budget}")
        if budget not in (spec.c_min, spec.c_max):
            bad("budget in {C_min, C_max}", i, f"budget {budget}")
        if budget != prev_budget:
            expansions += 1
            if prev_budget != spec.c_min or budget != spec.c_max:
                bad("monotone single expansion", i, f"budget moved {prev_budget} -> {budget}")
            if expansions > 1:
                bad("monotone single expansion", i, "second expansion")
            if st.get("verdict") != "demanding":
                bad("expansion guard", i, "expanded without a demanding verdict")
        if kind == "expanded_then_cached" and budget == prev_budget:
            bad("expansion guard", i, "expanded decision without a budget change")

        if (kind == "skipped_exceeds_cmax") != (t > spec.c_max):
            bad("skip rule C_max", i, f"{kind} with {t} tokens, C_max {spec.c_max}")
        if kind == "skipped_exceeds_budget":
            overflow = sum(sizes[s] for s in prev_scales) + t > budget
            if not (overflow and t > budget):
                bad("skip rule budget", i, f"skipped {t} tokens under budget {budget}")
        if kind.startswith("skipped"):
            if scales != prev_scales or evicted:
                bad("skip leaves cache unchanged", i, f"{prev_scales} -> {scales}")
        else:
            candidates = [s for s in (*prev_scales, i) if s > cds]
            if evicted != candidates[: len(evicted)]:
                bad("FIFO eviction order", i, f"evicted {evicted}, oldest non-condensed were {candidates}")
            if any(s <= cds for s in evicted):
                bad("condensed pinning", i, f"evicted condensed scale in {evicted}")
            expected = tuple(s for s in (*prev_scales, i) if s not in evicted)
            if scales != expected:
                bad("cache contents", i, f"expected {expected}, recorded {scales}")
        if kind == "cached" and scales != (*prev_scales, i):
            bad("plain append", i, f"{prev_scales} + r{i} recorded as {scales}")
        missing = ever_cached_condensed - set(scales)
        if missing:
            bad("condensed pinning", i, f"condensed scales {sorted(missing)} disappeared")
        ever_cached_condensed |= {s for s in scales if s <= cds}

        fleet = None if fleet_by_scale is None else fleet_by_scale.get(i)
        try:
            again = amskv_step(replay, KVBlock(i, st["side"]), st.get("similarity"), fleet)
        except Exception as exc:  # noqa: BLE001
            bad("replay", i, f"replay raised {exc!r}")
            break
        if (again.kind.value, list(again.evicted), again.budget, again.cached_scales) != (kind, evicted, budget, scales):
            bad("replay", i, f"replay gave {again.kind.value} {list(again.evicted)} budget {again.budget}")

        prev_scales = scales
        prev_budget = budget
    return problems
