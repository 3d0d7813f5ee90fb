"""Scale schedules, budget derivation, grouping and the analytic memory model."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from .errors import ConfigError

DEFAULT_SIDES = (1, 2, 3, 4, 5, 6, 8, 10, 13, 16)
DEFAULT_RHO = Fraction(1, 6)


@dataclass(frozen=True)
class ScaleSchedule:
    """Square scales ``side x side``, coarse to fine. Scale indices are 1-based."""

    sides: tuple[int, ...] = DEFAULT_SIDES

    def __post_init__(self):
        sides = tuple(int(s) for s in self.sides)
        object.__setattr__(self, "sides", sides)
        if not sides:
            raise ConfigError("schedule needs at least one scale")
        if any(s < 1 for s in sides):
            raise ConfigError(f"scale sides must be positive, got {sides}")
        if any(b < a for a, b in zip(sides, sides[1:])):
            raise ConfigError(f"scale sides must be non-decreasing, got {sides}")

    @property
    def K(self) -> int:
        return len(self.sides)

    @property
    def tokens(self) -> tuple[int, ...]:
        return tuple(s * s for s in self.sides)

    def side(self, index: int) -> int:
        return self.sides[index - 1]

    def token_count(self, index: int) -> int:
        return self.sides[index - 1] ** 2

    def condensed_tokens(self, cds_count: int) -> int:
        return sum(self.tokens[:cds_count])


def total_tokens(schedule: ScaleSchedule | Sequence[int]) -> int:
    sides = schedule.sides if isinstance(schedule, ScaleSchedule) else schedule
    return sum(s * s for s in sides)


@dataclass(frozen=True)
class ThetaMode:
    """Threshold for the similarity guard.

    ``absolute``: a layer is demanding when its score is below ``value``.
    ``quantile``: demanding when its score ranks in the lowest ``value``
    fraction of all layers at the same scale.
    """

    kind: str = "quantile"
    value: float | Fraction = DEFAULT_RHO

    def __post_init__(self):
        if self.kind not in ("absolute", "quantile"):
            raise ConfigError(f"theta mode must be 'absolute' or 'quantile', got {self.kind!r}")
        if self.kind == "quantile":
            rho = Fraction(self.value).limit_denominator(10**6)
            if not 0 <= rho <= 1:
                raise ConfigError(f"quantile fraction must lie in [0, 1], got {self.value}")
            object.__setattr__(self, "value", rho)

    @classmethod
    def absolute(cls, theta: float) -> "ThetaMode":
        return cls("absolute", float(theta))

    @classmethod
    def quantile(cls, rho=DEFAULT_RHO) -> "ThetaMode":
        return cls("quantile", rho)


@dataclass(frozen=True)
class BudgetSpec:
    c_min: int
    c_max: int
    cds_count: int = 2
    theta: ThetaMode = field(default_factory=ThetaMode)

    def validate(self, schedule: ScaleSchedule) -> "BudgetSpec":
        """Check ``C_cds tokens < C_min <= C_max`` against ``schedule``."""
        if self.cds_count < 0 or self.cds_count > schedule.K:
            raise ConfigError(f"cds_count {self.cds_count} outside [0, {schedule.K}]")
        cds = schedule.condensed_tokens(self.cds_count)
        if not cds < self.c_min:
            raise ConfigError(
                f"budget invariant 'C_min >> C_cds' violated: C_min={self.c_min} "
                f"but the {self.cds_count} condensed scales hold {cds} tokens"
            )
        if not self.c_min <= self.c_max:
            raise ConfigError(f"budget invariant 'C_min <= C_max' violated: {self.c_min} > {self.c_max}")
        return self


def derive_budgets(schedule: ScaleSchedule, rule="default", cds_count: int = 2,
                   theta: ThetaMode | None = None) -> BudgetSpec:
    """Budgets from the experimental-setup rule, or pass an explicit spec through.

    Default rule: ``C_min`` holds the penultimate scale plus the condensed
    scales, ``C_max`` the last two scales plus the condensed scales.
    """
    if isinstance(rule, BudgetSpec):
        return rule.validate(schedule)
    if rule != "default":
        raise ConfigError(f"unknown budget rule {rule!r}")
    if schedule.K < 4:
        raise ConfigError(f"default budget rule needs at least 4 scales, got {schedule.K}")
    t = schedule.tokens
    cds = schedule.condensed_tokens(cds_count)
    spec = BudgetSpec(
        c_min=t[-2] + cds,
        c_max=t[-2] + t[-1] + cds,
        cds_count=cds_count,
        theta=theta if theta is not None else ThetaMode(),
    )
    return spec.validate(schedule)


@dataclass(frozen=True)
class ScaleGroups:
    condensed: frozenset
    local: frozenset
    intermediate: frozenset


def scale_groups(schedule: ScaleSchedule, current: int, cds_count: int = 2, n_local: int = 2) -> ScaleGroups:
    """Partition the scales preceding ``current`` into condensed/local/intermediate.

    Where the condensed and local windows overlap, condensed wins.
    """
    if not 1 <= current <= schedule.K:
        raise ConfigError(f"current scale {current} outside [1, {schedule.K}]")
    past = set(range(1, current))
    condensed = set(range(1, min(cds_count, current - 1) + 1))
    local = set(range(max(1, current - n_local), current)) - condensed
    return ScaleGroups(frozenset(condensed), frozenset(local), frozenset(past - condensed - local))


@dataclass(frozen=True)
class MemoryModel:
    n_layers: int
    n_heads: int
    head_dim: int
    bytes_per_element: int = 4

    def __post_init__(self):
        if min(self.n_layers, self.n_heads, self.head_dim, self.bytes_per_element) < 1:
            raise ConfigError(f"memory model fields must be positive: {self}")


def kv_bytes(tokens: int, model: MemoryModel) -> int:
    """Bytes for keys plus values of ``tokens`` cached tokens in every layer."""
    return 2 * model.n_layers * model.n_heads * model.head_dim * tokens * model.bytes_per_element


@dataclass(frozen=True)
class TimelineStep:
    scale: int
    tokens: int
    cached_before: int
    cached_after: int
    budget: int
    event: str

    @property
    def context(self) -> int:
        return self.cached_before + self.tokens


@dataclass(frozen=True)
class Timeline:
    schedule: ScaleSchedule
    classification: tuple[str, ...]
    layers: tuple[tuple[TimelineStep, ...], ...]

    @property
    def total(self) -> int:
        return total_tokens(self.schedule)

    def final_cached(self) -> list[int]:
        return [steps[-1].cached_after for steps in self.layers]

    def peak_cached(self) -> list[int]:
        return [max(s.cached_after for s in steps) for steps in self.layers]

    def mean_final(self) -> Fraction:
        final = self.final_cached()
        return Fraction(sum(final), len(final))

    def reduction(self) -> Fraction:
        return 1 - self.mean_final() / self.total

    def compression(self) -> Fraction:
        return Fraction(self.total) / self.mean_final()

    def full_context(self, scale: int) -> int:
        return sum(self.schedule.tokens[:scale])

    def context_ratio(self, scale: int) -> Fraction:
        """Mean attended context relative to a full cache at ``scale``.

        Attention FLOPs at a step are proportional to context x current
        tokens, so this is also the per-step FLOP ratio.
        """
        ctx = sum(steps[scale - 1].context for steps in self.layers)
        return Fraction(ctx, len(self.layers) * self.full_context(scale))

    def flop_ratio(self) -> Fraction:
        """Whole-run attention FLOP ratio versus a full cache."""
        t = self.schedule.tokens
        num = sum(s.context * s.tokens for steps in self.layers for s in steps)
        den = len(self.layers) * sum(self.full_context(i + 1) * t[i] for i in range(len(t)))
        return Fraction(num, den)


def analytic_timeline(schedule: ScaleSchedule, spec: BudgetSpec, classification: Sequence[str]) -> Timeline:
    """Size-only walk of the adaptive caching rule, one walk per layer.

    ``classification[l]`` is ``"efficient"`` (the similarity guard never
    fires) or ``"demanding"`` (it fires at every evaluation). No tensors are
    involved; this is the reference for the cached-token and FLOP figures.
    """
    spec.validate(schedule)
    for c in classification:
        if c not in ("efficient", "demanding"):
            raise ConfigError(f"layer class must be 'efficient' or 'demanding', got {c!r}")
    layers = []
    for cls in classification:
        blocks: list[tuple[int, int]] = []  # (scale, tokens) in insertion order
        budget = spec.c_min
        steps = []
        for i, t in enumerate(schedule.tokens, start=1):
            before = sum(n for _, n in blocks)
            if t > spec.c_max:
                steps.append(TimelineStep(i, t, before, before, budget, "skip_cmax"))
                continue
            blocks.append((i, t))
            event = "cached"
            if before + t > budget:
                if budget == spec.c_min and cls == "demanding" and spec.c_max > spec.c_min:
                    budget = spec.c_max
                    event = "expanded"
                if t > budget:
                    blocks.pop()
                    steps.append(TimelineStep(i, t, before, before, budget, "skip_budget"))
                    continue
                while sum(n for _, n in blocks) > budget:
                    victim = next(k for k, (s, _) in enumerate(blocks) if s > spec.cds_count)
                    blocks.pop(victim)
                if event == "cached":
                    event = "evicted"
            steps.append(TimelineStep(i, t, before, sum(n for _, n in blocks), budget, event))
        layers.append(tuple(steps))
    return Timeline(schedule, tuple(classification), tuple(layers))


def spec_to_dict(spec: BudgetSpec) -> dict:
    return {
        "c_min": spec.c_min,
        "c_max": spec.c_max,
        "cds_count": spec.cds_count,
        "theta": {"mode": spec.theta.kind, "value": str(spec.theta.value) if spec.theta.kind == "quantile" else spec.theta.value},
    }


def theta_from_dict(d: dict | None) -> ThetaMode:
    if d is None:
        return ThetaMode()
    mode = d.get("mode", "quantile")
    if mode == "quantile":
        return ThetaMode.quantile(Fraction(str(d.get("value", d.get("rho", DEFAULT_RHO)))))
    if mode == "absolute":
        if "value" not in d:
            raise ConfigError("absolute theta needs a 'value'")
        return ThetaMode.absolute(float(d["value"]))
    raise ConfigError(f"theta mode must be 'absolute' or 'quantile', got {mode!r}")


def spec_from_dict(d: dict) -> BudgetSpec:
    return BudgetSpec(int(d["c_min"]), int(d["c_max"]), int(d.get("cds_count", 2)), theta_from_dict(d.get("theta")))
