"""Experiment execution behind the CLI subcommands."""
from __future__ import annotations

import logging
import time
from dataclasses import replace
from pathlib import Path

from ..attn import attention_density
from ..cachecore import AmsKv, FullCache, SinkWindow, SlidingWindow, validate_steps
from ..errors import ConfigError, InvariantViolation
from ..schedule import BudgetSpec, MemoryModel, kv_bytes, total_tokens
from ..toymodel import GenerationTrace, generate, init_model
from .config import ExperimentConfig, PolicyEntry
from .report import build_report, comparison_row, write_report, write_table

log = logging.getLogger(__name__)

TABLE_SCHEMA_VERSION = 1


def _mean(total, n):
    return total // n if total % n == 0 else total / n


def run_one(cfg: ExperimentConfig, entry: PolicyEntry, seed: int):
    model = init_model(cfg.model_for_seed(seed))
    start = time.perf_counter()
    trace = generate(model, entry.policy, entry.spec, compare_oracle=cfg.compare_oracle)
    wall = time.perf_counter() - start
    trace.meta = {"label": entry.label, "seed": seed, "config_hash": cfg.config_hash,
                  "bytes_per_element": cfg.memory.bytes_per_element}
    return trace, wall


def report_from_trace(trace: GenerationTrace, wall_time=None) -> dict:
    meta = trace.meta
    cfg = trace.config
    memory = MemoryModel(cfg.n_layers, cfg.n_heads, cfg.head_dim, meta.get("bytes_per_element", 4))
    return build_report(trace, meta.get("label", trace.policy.kind), meta.get("seed", cfg.seed), memory,
                        meta.get("config_hash", ""), wall_time)


def validate_trace(trace: GenerationTrace) -> list[str]:
    """Invariant check of a stored trace; returns violation messages."""
    problems = []
    cfg = trace.config
    if len(trace.tokens) != cfg.schedule.K:
        problems.append(f"scale count: {len(trace.tokens)} grids for {cfg.schedule.K} scales")
    if len(trace.steps) != cfg.schedule.K * cfg.n_layers:
        problems.append(f"step count: {len(trace.steps)} records for {cfg.schedule.K} scales x {cfg.n_layers} layers")
    fleet = {}
    for s in trace.steps:
        fleet.setdefault(s["scale"], [None] * cfg.n_layers)[s["layer"]] = s["similarity"]
    fleet = {i: v for i, v in fleet.items() if None not in v}
    for l in range(cfg.n_layers):
        steps = sorted(trace.layer_steps(l), key=lambda s: s["scale"])
        before = 0
        for s in steps:
            if s["budget"] is not None and s["cached_tokens"] > s["budget"]:
                problems.append(f"cached tokens <= budget: layer {l} scale {s['scale']}")
            if trace.policy.kind != "ablation" and s["context_tokens"] != before + s["side"] ** 2:
                problems.append(f"context = cache + current: layer {l} scale {s['scale']}")
            before = s["cached_tokens"]
        if isinstance(trace.policy, AmsKv):
            problems += [f"layer {l}: {p}" for p in validate_steps(steps, trace.spec, fleet)]
    return problems


def run_experiment(cfg: ExperimentConfig, out_dir: Path, fmt: str | None = None) -> dict:
    """Run every (policy, seed); write traces, per-policy reports and the comparison."""
    fmt = fmt or cfg.formats[0]
    out_dir = Path(out_dir)
    (out_dir / "traces").mkdir(parents=True, exist_ok=True)
    reports = {}
    for entry in cfg.policies:
        reports[entry.label] = []
        for seed in cfg.seeds:
            trace, wall = run_one(cfg, entry, seed)
            problems = validate_trace(trace)
            if problems:
                raise InvariantViolation(problems[0].split(":")[0], "; ".join(problems[:5]))
            (out_dir / "traces" / f"{entry.label}_seed{seed}.jsonl").write_text(trace.to_jsonl())
            reports[entry.label].append(report_from_trace(trace, wall))
            log.info("%s seed %d: %.3fs", entry.label, seed, wall)
        write_report(out_dir, entry.label, reports[entry.label], fmt)
    rows = [comparison_row(r) for reps in reports.values() for r in reps]
    write_table(out_dir / "comparison", rows, fmt)
    return reports


def matched_budget_entries(cfg: ExperimentConfig, equal_budget: int) -> list[PolicyEntry]:
    """AMS-KV, sliding window and sink window sized to ``equal_budget`` tokens."""
    schedule = cfg.schedule
    total = total_tokens(schedule)
    base = next((e.spec for e in cfg.policies if isinstance(e.policy, AmsKv)), cfg.policies[0].spec)
    cds_tokens = schedule.condensed_tokens(base.cds_count)
    if equal_budget >= total:
        spec = BudgetSpec(total, total, base.cds_count, base.theta)
    else:
        c_max = min(base.c_max, equal_budget)
        spec = BudgetSpec(min(base.c_min, c_max), c_max, base.cds_count, base.theta)
    try:
        spec.validate(schedule)
    except ConfigError as exc:
        raise ConfigError(f"equal budget {equal_budget} is unrealizable for AMS-KV: {exc}") from None
    sink = max(cds_tokens, 1)
    if equal_budget - sink < 1:
        raise ConfigError(f"equal budget {equal_budget} leaves no window after a {sink}-token sink")
    return [
        PolicyEntry("ams_kv", AmsKv(), spec),
        PolicyEntry("sliding_window", SlidingWindow(equal_budget), spec),
        PolicyEntry("sink_window", SinkWindow(sink, equal_budget - sink), spec),
    ]


def run_compare(cfg: ExperimentConfig, equal_budget: int, out_dir: Path, fmt: str | None = None) -> list[dict]:
    fmt = fmt or cfg.formats[0]
    entries = matched_budget_entries(cfg, equal_budget)
    cfg = replace(cfg, compare_oracle=True)
    rows = []
    for seed in cfg.seeds:
        seed_rows = []
        for entry in entries:
            trace, _ = run_one(cfg, entry, seed)
            rep = report_from_trace(trace)
            row = comparison_row(rep)
            row["equal_budget"] = equal_budget
            row["rounding_slack"] = equal_budget - rep["realized_budget"]
            row["within_budget"] = rep["realized_budget"] <= equal_budget
            seed_rows.append(row)
        ams = seed_rows[0]["realized_budget"]
        for row in seed_rows:
            row["realized_gap_vs_ams_kv"] = row["realized_budget"] - ams
            row["budget_mismatch"] = not row["within_budget"]
        rows += seed_rows
    write_table(Path(out_dir) / "compare", rows, fmt)
    return rows


def run_analyze(cfg: ExperimentConfig, target_scale: int | None, out_dir: Path, fmt: str | None = None):
    """Density table at ``target_scale`` and the per-(layer, scale) similarity table."""
    fmt = fmt or cfg.formats[0]
    schedule = cfg.schedule
    target = schedule.K if target_scale is None else target_scale
    if not 1 <= target <= schedule.K:
        raise ConfigError(f"target scale {target} outside [1, {schedule.K}]")
    seed = cfg.seeds[0]
    model = init_model(cfg.model_for_seed(seed))
    trace = generate(model, FullCache(), cfg.policies[0].spec, capture_scale=target)
    density_rows = []
    for layer, slices in sorted(trace.slices.items()):
        table = attention_density(slices, schedule, target)
        for row in table.rows():
            density_rows.append({"schema_version": TABLE_SCHEMA_VERSION, "seed": seed, "layer": layer,
                                 "target_scale": target, "tokens": schedule.token_count(row["scale"]), **row})
    sim_rows = [{"schema_version": TABLE_SCHEMA_VERSION, "seed": seed, "layer": s["layer"], "scale": s["scale"],
                 "score": s["similarity"], "rms": s["similarity_rms"]}
                for s in sorted(trace.steps, key=lambda s: (s["layer"], s["scale"])) if s["similarity"] is not None]
    out_dir = Path(out_dir)
    write_table(out_dir / "density", density_rows, fmt)
    write_table(out_dir / "similarity", sim_rows, fmt)
    return density_rows, sim_rows


def run_timeline(cfg: ExperimentConfig, out_dir: Path, fmt: str | None = None) -> list[dict]:
    """Per-step cached and working-set tokens and bytes for every policy."""
    fmt = fmt or cfg.formats[0]
    mem = cfg.memory
    layer_mem = MemoryModel(1, mem.n_heads, mem.head_dim, mem.bytes_per_element)
    rows = []
    for entry in cfg.policies:
        for seed in cfg.seeds:
            model = init_model(cfg.model_for_seed(seed))
            trace = generate(model, entry.policy, entry.spec)
            n_layers = trace.config.n_layers
            for i, side in enumerate(cfg.schedule.sides, start=1):
                steps = [s for s in trace.steps if s["scale"] == i]
                cached = sum(s["cached_tokens"] for s in steps)
                working = side * side
                rows.append({
                    "schema_version": TABLE_SCHEMA_VERSION, "policy": entry.label, "seed": seed, "scale": i,
                    "cached_tokens": _mean(cached, n_layers), "cached_tokens_total": cached,
                    "working_set_tokens": working,
                    "kv_bytes": sum(kv_bytes(s["cached_tokens"], layer_mem) for s in steps),
                    "working_set_bytes": kv_bytes(working, mem),
                    "context_tokens": _mean(sum(s["context_tokens"] for s in steps), n_layers),
                })
    write_table(Path(out_dir) / "timeline", rows, fmt)
    return rows
