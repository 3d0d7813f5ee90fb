"""Run reports derived from generation traces, and table writers.

A report is a pure function of the trace (plus run metadata), so storing the
trace is enough to regenerate it. Wall time is the only field not derivable
from the trace.
"""
from __future__ import annotations

import csv
import json
from fractions import Fraction
from pathlib import Path

from .. import __version__
from ..cachecore import AmsKv, SinkWindow, SlidingWindow, StaticAlloc, policy_to_dict
from ..schedule import MemoryModel, kv_bytes, total_tokens

REPORT_SCHEMA_VERSION = 1
WALL_TIME_FIELDS = ("wall_time_s",)


def nominal_budget(policy, spec, schedule) -> int:
    if isinstance(policy, (AmsKv, StaticAlloc)):
        return spec.c_max
    if isinstance(policy, SlidingWindow):
        return policy.window
    if isinstance(policy, SinkWindow):
        return policy.sink + policy.window
    return total_tokens(schedule)


def attention_flops(context_tokens: int, current_tokens: int, n_heads: int, head_dim: int) -> int:
    """Score plus weighted-sum multiply-adds of one layer at one scale."""
    return 2 * context_tokens * current_tokens * head_dim * n_heads


def full_cache_flops(schedule, n_layers, n_heads, head_dim) -> int:
    t = schedule.tokens
    return n_layers * sum(attention_flops(sum(t[: i + 1]), t[i], n_heads, head_dim) for i in range(len(t)))


def build_report(trace, label: str, seed: int, memory: MemoryModel, config_hash: str, wall_time=None) -> dict:
    cfg = trace.config
    schedule = cfg.schedule
    layer_mem = MemoryModel(1, memory.n_heads, memory.head_dim, memory.bytes_per_element)
    peak, final = [], []
    for l in range(cfg.n_layers):
        steps = trace.layer_steps(l)
        peak.append(max(s["cached_tokens"] for s in steps))
        final.append(steps[-1]["cached_tokens"])
    flops = sum(attention_flops(s["context_tokens"], s["side"] ** 2, cfg.n_heads, cfg.head_dim) for s in trace.steps)
    full_flops = full_cache_flops(schedule, cfg.n_layers, cfg.n_heads, cfg.head_dim)
    total = total_tokens(schedule)
    mean_final = Fraction(sum(final), len(final))
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "tool_version": __version__,
        "config_hash": config_hash,
        "policy": label,
        "policy_spec": policy_to_dict(trace.policy),
        "seed": seed,
        "c_min": trace.spec.c_min,
        "c_max": trace.spec.c_max,
        "cds_count": trace.spec.cds_count,
        "large_layers": list(trace.large_layers),
        "total_tokens": total,
        "nominal_budget": nominal_budget(trace.policy, trace.spec, schedule),
        "realized_budget": max(peak),
        "peak_cached": peak,
        "final_cached": final,
        "final_cached_mean": float(mean_final),
        "cache_reduction": float(1 - mean_final / total),
        "kv_bytes_peak": sum(kv_bytes(p, layer_mem) for p in peak),
        "kv_bytes_final": sum(kv_bytes(f, layer_mem) for f in final),
        "kv_bytes_full": kv_bytes(total, memory),
        "attention_flops": flops,
        "attention_flops_full": full_flops,
        "flop_ratio": float(Fraction(flops, full_flops)),
        "expanded_layers": sorted({s["layer"] for s in trace.steps if s["decision"] == "expanded_then_cached"}),
        "fidelity": [] if trace.fidelity is None else list(trace.fidelity.rows()),
        "wall_time_s": wall_time,
    }
    if trace.fidelity is not None:
        report["fidelity_final_rel_error"] = trace.fidelity.rel_error[-1]
        report["fidelity_final_cosine"] = trace.fidelity.cosine[-1]
        report["fidelity_mean_rel_error"] = trace.fidelity.mean_rel_error
        report["fidelity_mean_cosine"] = trace.fidelity.mean_cosine
    return report


def strip_wall_time(report: dict) -> dict:
    return {k: v for k, v in report.items() if k not in WALL_TIME_FIELDS}


def report_rows(report: dict):
    """Long-form rows ``(metric, layer, scale, value)`` for CSV output."""
    head = {"schema_version": report["schema_version"], "tool_version": report["tool_version"],
            "config_hash": report["config_hash"], "policy": report["policy"], "seed": report["seed"]}
    skip = {"schema_version", "tool_version", "config_hash", "policy", "seed", "peak_cached", "final_cached",
            "fidelity", "policy_spec", "large_layers", "expanded_layers"}
    for key, value in report.items():
        if key not in skip:
            yield {**head, "metric": key, "layer": "", "scale": "", "value": "" if value is None else value}
    yield {**head, "metric": "policy_spec", "layer": "", "scale": "", "value": json.dumps(report["policy_spec"], sort_keys=True)}
    for key in ("large_layers", "expanded_layers"):
        yield {**head, "metric": key, "layer": "", "scale": "", "value": " ".join(map(str, report[key]))}
    for l, (p, f) in enumerate(zip(report["peak_cached"], report["final_cached"])):
        yield {**head, "metric": "peak_cached", "layer": l, "scale": "", "value": p}
        yield {**head, "metric": "final_cached", "layer": l, "scale": "", "value": f}
    for row in report["fidelity"]:
        yield {**head, "metric": "rel_error", "layer": "", "scale": row["scale"], "value": row["rel_error"]}
        yield {**head, "metric": "cosine", "layer": "", "scale": row["scale"], "value": row["cosine"]}


COMPARISON_FIELDS = ("policy", "seed", "nominal_budget", "realized_budget", "final_cached_mean", "cache_reduction",
                     "kv_bytes_peak", "kv_bytes_final", "attention_flops", "flop_ratio",
                     "fidelity_final_rel_error", "fidelity_final_cosine", "fidelity_mean_rel_error",
                     "fidelity_mean_cosine", "expanded_layers")


def comparison_row(report: dict) -> dict:
    row = {"schema_version": REPORT_SCHEMA_VERSION, "config_hash": report["config_hash"]}
    for key in COMPARISON_FIELDS:
        value = report.get(key, "")
        row[key] = " ".join(map(str, value)) if isinstance(value, list) else value
    return row


def write_table(path_stem: Path, rows, fmt: str = "csv", fieldnames=None) -> Path:
    """Write ``rows`` (dicts) as ``<stem>.csv`` or ``<stem>.jsonl``."""
    rows = list(rows)
    path_stem.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "json-lines":
        path = path_stem.with_suffix(".jsonl")
        with path.open("w") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        return path
    path = path_stem.with_suffix(".csv")
    if fieldnames is None:
        fieldnames = list(rows[0]) if rows else []
        for row in rows:
            fieldnames += [k for k in row if k not in fieldnames]
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return path


def write_report(out_dir: Path, label: str, reports: list, fmt: str) -> Path:
    """One file per policy holding every seed's report."""
    if fmt == "json-lines":
        return write_table(out_dir / f"report_{label}", reports, fmt)
    rows = [row for rep in reports for row in report_rows(rep)]
    return write_table(out_dir / f"report_{label}", rows, fmt)
