"""Experiment configuration files (JSON).

Schema (``schema_version`` 1)::

    {
      "schema_version": 1,
      "model": {"n_layers": 2, "n_heads": 2, "head_dim": 8, "vocab_size": 32},
      "schedule": [1, 2, 3, 4, 5, 6, 8, 10, 13, 16],
      "budget": {"rule": "default", "cds_count": 2},
      "theta": {"mode": "quantile", "value": "1/6"},
      "n_local": 2,
      "policies": [{"kind": "full_cache"}, {"kind": "ams_kv", "label": "amskv"}],
      "seeds": [0],
      "memory": {"bytes_per_element": 4},
      "compare_oracle": true,
      "output_dir": "out",
      "formats": ["csv"]
    }

``budget`` may instead be ``{"rule": "explicit", "c_min": .., "c_max": .., "cds_count": ..}``.
Each policy entry takes its policy's fields (``window``, ``sink``, ``strategy``,
``large_fraction``, ``drop``), an optional ``label`` and optional ``budget`` /
``theta`` overrides. Absolute thresholds accept ``"-inf"``.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..cachecore import policy_from_dict, policy_to_dict
from ..errors import ConfigError
from ..schedule import DEFAULT_SIDES, BudgetSpec, MemoryModel, ScaleSchedule, derive_budgets, theta_from_dict
from ..toymodel import ToyModelConfig

SCHEMA_VERSION = 1
FORMATS = ("csv", "json-lines")

_TOP_KEYS = {"schema_version", "model", "schedule", "budget", "theta", "n_local", "policies", "seeds",
             "memory", "compare_oracle", "output_dir", "formats"}


@dataclass(frozen=True)
class PolicyEntry:
    label: str
    policy: object
    spec: BudgetSpec


@dataclass
class ExperimentConfig:
    model: ToyModelConfig
    policies: list
    seeds: list
    memory: MemoryModel
    n_local: int = 2
    compare_oracle: bool = True
    output_dir: str = "out"
    formats: list = field(default_factory=lambda: ["csv"])
    raw: dict = field(default_factory=dict)

    @property
    def schedule(self) -> ScaleSchedule:
        return self.model.schedule

    @property
    def config_hash(self) -> str:
        return config_hash(self.raw)

    def model_for_seed(self, seed: int) -> ToyModelConfig:
        d = self.model.to_dict()
        d["seed"] = seed
        return ToyModelConfig.from_dict(d)


def canonical(raw: dict) -> str:
    return json.dumps(raw, sort_keys=True, separators=(",", ":"))


def config_hash(raw: dict) -> str:
    return hashlib.sha256(canonical(raw).encode()).hexdigest()[:16]


def _field(where, exc):
    return ConfigError(f"{where}: {exc}")


def _budget(d, schedule, theta, where):
    if d is None:
        d = {"rule": "default"}
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    d = dict(d)
    rule = d.pop("rule", "default")
    cds = d.pop("cds_count", 2)
    try:
        if rule == "default":
            if d:
                raise ConfigError(f"unexpected keys {sorted(d)}")
            return derive_budgets(schedule, "default", int(cds), theta)
        if rule == "explicit":
            spec = BudgetSpec(int(d.pop("c_min")), int(d.pop("c_max")), int(cds), theta)
            if d:
                raise ConfigError(f"unexpected keys {sorted(d)}")
            return spec.validate(schedule)
    except KeyError as exc:
        raise ConfigError(f"{where}: missing field {exc}") from None
    except ConfigError as exc:
        raise _field(where, exc) from None
    raise ConfigError(f"{where}.rule: expected 'default' or 'explicit', got {rule!r}")


def parse_config(raw: dict, seed_override: int | None = None) -> ExperimentConfig:
    """Validate a decoded config; ``ConfigError`` messages name the offending field."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw = copy.deepcopy(raw)
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level fields {sorted(unknown)}")
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: unsupported value {version!r} (expected {SCHEMA_VERSION})")
    if seed_override is not None:
        raw["seeds"] = [seed_override]

    try:
        schedule = ScaleSchedule(tuple(raw.get("schedule", DEFAULT_SIDES)))
    except (ConfigError, TypeError, ValueError) as exc:
        raise _field("schedule", exc) from None
    model_raw = dict(raw.get("model", {}))
    model_raw.pop("seed", None)
    try:
        model = ToyModelConfig(schedule=schedule, **model_raw)
    except (ConfigError, TypeError) as exc:
        raise _field("model", exc) from None

    try:
        theta = theta_from_dict(raw.get("theta"))
    except (ConfigError, ValueError, ZeroDivisionError) as exc:
        raise _field("theta", exc) from None
    base_budget = raw.get("budget")
    n_local = raw.get("n_local", 2)
    if not isinstance(n_local, int) or n_local < 0:
        raise ConfigError("n_local: expected a non-negative integer")

    entries = raw.get("policies")
    if not isinstance(entries, list) or not entries:
        raise ConfigError("policies: at least one policy is required")
    policies, labels = [], set()
    for k, entry in enumerate(entries):
        where = f"policies[{k}]"
        if not isinstance(entry, dict):
            raise ConfigError(f"{where}: expected an object")
        entry = dict(entry)
        label = entry.pop("label", None) or entry.get("kind", "?")
        p_theta = theta
        if "theta" in entry:
            try:
                p_theta = theta_from_dict(entry.pop("theta"))
            except (ConfigError, ValueError) as exc:
                raise _field(f"{where}.theta", exc) from None
        spec = _budget(entry.pop("budget", base_budget), schedule, p_theta,
                       f"{where}.budget" if "budget" in entries[k] else "budget")
        if entry.get("kind") == "ablation":
            entry.setdefault("n_local", n_local)
        try:
            policy = policy_from_dict(entry)
        except ConfigError as exc:
            raise _field(where, exc) from None
        if label in labels:
            raise ConfigError(f"{where}.label: duplicate label {label!r}")
        labels.add(label)
        policies.append(PolicyEntry(label, policy, spec))

    seeds = raw.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds: expected a non-empty list of integers")
    mem = dict(raw.get("memory", {}))
    try:
        memory = MemoryModel(model.n_layers, model.n_heads, model.head_dim, int(mem.pop("bytes_per_element", 4)))
    except (ConfigError, ValueError) as exc:
        raise _field("memory", exc) from None
    if mem:
        raise ConfigError(f"memory: unexpected fields {sorted(mem)}")
    formats = raw.get("formats", ["csv"])
    if not isinstance(formats, list) or not formats or any(f not in FORMATS for f in formats):
        raise ConfigError(f"formats: expected a non-empty subset of {list(FORMATS)}")

    normalised = {
        "schema_version": SCHEMA_VERSION,
        "model": {k: v for k, v in model.to_dict().items() if k not in ("schedule", "seed")},
        "schedule": list(schedule.sides),
        "n_local": n_local,
        "policies": [{"label": e.label, **policy_to_dict(e.policy),
                      "spec": {"c_min": e.spec.c_min, "c_max": e.spec.c_max, "cds_count": e.spec.cds_count,
                               "theta": [e.spec.theta.kind, str(e.spec.theta.value)]}} for e in policies],
        "seeds": seeds,
        "memory": {"bytes_per_element": memory.bytes_per_element},
        "compare_oracle": bool(raw.get("compare_oracle", True)),
    }
    return ExperimentConfig(model, policies, seeds, memory, n_local, normalised["compare_oracle"],
                            str(raw.get("output_dir", "out")), formats, normalised)


def load_config(path, seed_override: int | None = None) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    try:
        return parse_config(raw, seed_override)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


__all__ = ["ExperimentConfig", "PolicyEntry", "load_config", "parse_config", "config_hash"]
