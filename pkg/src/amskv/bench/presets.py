"""Desk-scale experiment presets on a 2-layer toy model.

* ``ablation``     -- hide condensed / local / intermediate scales from attention
* ``layer_alloc``  -- static large budgets spread over depth (s1) vs on the
                      lowest-similarity layers (s2)
* ``cds_sweep``    -- adaptive caching with 0, 1 and 2 condensed scales
* ``budget_sweep`` -- adaptive caching over a grid of (C_min, C_max)
"""
from __future__ import annotations

from ..schedule import DEFAULT_SIDES, ScaleSchedule, total_tokens

BASE_MODEL = {"n_layers": 2, "n_heads": 2, "head_dim": 8, "vocab_size": 32}


def _base(policies, **extra):
    cfg = {
        "schema_version": 1,
        "model": dict(BASE_MODEL),
        "schedule": list(DEFAULT_SIDES),
        "budget": {"rule": "default", "cds_count": 2},
        "theta": {"mode": "quantile", "value": "1/6"},
        "n_local": 2,
        "policies": policies,
        "seeds": [0],
        "memory": {"bytes_per_element": 4},
        "compare_oracle": True,
        "formats": ["csv"],
    }
    cfg.update(extra)
    return cfg


def ablation():
    return _base([
        {"kind": "full_cache"},
        {"kind": "ablation", "drop": "intermediate", "label": "drop_intermediate"},
        {"kind": "ablation", "drop": "local", "label": "drop_local"},
        {"kind": "ablation", "drop": "condensed", "label": "drop_condensed"},
        {"kind": "ams_kv"},
    ])


def layer_alloc():
    return _base([
        {"kind": "full_cache"},
        {"kind": "static_alloc", "strategy": "s1", "large_fraction": "1/6", "label": "s1_uniform"},
        {"kind": "static_alloc", "strategy": "s2", "large_fraction": "1/6", "label": "s2_similarity"},
        {"kind": "ams_kv"},
    ])


def cds_sweep():
    return _base([{"kind": "full_cache"}] + [
        {"kind": "ams_kv", "label": f"cds{c}", "budget": {"rule": "default", "cds_count": c}} for c in (0, 1, 2)
    ])


def budget_sweep(sides=DEFAULT_SIDES, cds_count=2):
    sched = ScaleSchedule(tuple(sides))
    t = sched.tokens
    cds = sched.condensed_tokens(cds_count)
    mins = sorted({t[-3] + cds, t[-2] + cds})
    maxes = sorted({t[-2] + cds, t[-2] + t[-1] + cds, total_tokens(sched)})
    policies = [{"kind": "full_cache"}]
    for c_min in mins:
        for c_max in maxes:
            if c_min <= c_max:
                policies.append({"kind": "ams_kv", "label": f"cmin{c_min}_cmax{c_max}",
                                 "budget": {"rule": "explicit", "c_min": c_min, "c_max": c_max,
                                            "cds_count": cds_count}})
    return _base(policies, schedule=list(sides))


PRESETS = {"ablation": ablation, "layer_alloc": layer_alloc, "cds_sweep": cds_sweep, "budget_sweep": budget_sweep}
