from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amskv.errors import ConfigError
from amskv.schedule import (
    BudgetSpec,
    MemoryModel,
    ScaleSchedule,
    ThetaMode,
    analytic_timeline,
    derive_budgets,
    kv_bytes,
    scale_groups,
    total_tokens,
)

VAR = ScaleSchedule((1, 2, 3, 4, 5, 6, 8, 10, 13, 16))


@st.composite
def schedules(draw, min_k=1, max_k=10):
    k = draw(st.integers(min_k, max_k))
    sides = sorted(draw(st.lists(st.integers(1, 16), min_size=k, max_size=k)))
    return ScaleSchedule(tuple(sides))


def test_total_tokens():
    assert total_tokens(VAR) == sum(s * s for s in VAR.sides) == 680
    assert total_tokens((1,)) == 1
    assert total_tokens(ScaleSchedule((2, 2))) == 8


def test_schedule_validation():
    with pytest.raises(ConfigError):
        ScaleSchedule((2, 1))
    with pytest.raises(ConfigError):
        ScaleSchedule((0, 1))
    with pytest.raises(ConfigError):
        ScaleSchedule(())


def test_derive_budgets_default_rule():
    spec = derive_budgets(VAR)
    assert (spec.c_min, spec.c_max, spec.cds_count) == (169 + 1 + 4, 169 + 256 + 1 + 4, 2)
    assert (spec.c_min, spec.c_max) == (174, 430)
    tiny = derive_budgets(ScaleSchedule((1, 2, 3, 4)))
    assert (tiny.c_min, tiny.c_max) == (14, 30)


def test_derive_budgets_explicit_and_errors():
    spec = BudgetSpec(50, 60, 2, ThetaMode.absolute(-1.0))
    assert derive_budgets(VAR, spec) is spec
    with pytest.raises(ConfigError):
        derive_budgets(ScaleSchedule((1, 2, 3)))
    with pytest.raises(ConfigError, match="C_min >> C_cds"):
        derive_budgets(VAR, BudgetSpec(5, 60, 2))
    with pytest.raises(ConfigError):
        derive_budgets(VAR, BudgetSpec(70, 60, 2))


@settings(max_examples=200)
@given(schedules(min_k=4))
def test_default_budgets_satisfy_invariant(sched):
    if not sched.sides[-1] > sched.sides[-2] > 0:
        return
    spec = derive_budgets(sched)
    assert sched.condensed_tokens(2) < spec.c_min <= spec.c_max


def test_scale_groups_examples():
    sched = ScaleSchedule(tuple(range(1, 11)))
    g = scale_groups(sched, 10, 2, 2)
    assert g.condensed == {1, 2} and g.local == {8, 9} and g.intermediate == {3, 4, 5, 6, 7}
    g = scale_groups(sched, 1, 2, 2)
    assert not (g.condensed or g.local or g.intermediate)
    g = scale_groups(sched, 3, 2, 2)
    assert g.condensed == {1, 2} and g.local == set() and g.intermediate == set()


@settings(max_examples=300)
@given(schedules(), st.data())
def test_scale_groups_partition(sched, data):
    current = data.draw(st.integers(1, sched.K))
    g = scale_groups(sched, current, data.draw(st.integers(0, 4)), data.draw(st.integers(0, 4)))
    parts = [g.condensed, g.local, g.intermediate]
    assert set().union(*parts) == set(range(1, current))
    assert sum(len(p) for p in parts) == current - 1


def test_kv_bytes():
    model = MemoryModel(n_layers=2, n_heads=2, head_dim=4, bytes_per_element=4)
    assert kv_bytes(21, model) == 2 * 2 * 2 * 4 * 21 * 4 == 2688
    assert kv_bytes(0, model) == 0
    assert kv_bytes(42, model) == 2 * kv_bytes(21, model)


def test_analytic_timeline_default_schedule():
    spec = derive_budgets(VAR)
    eff = analytic_timeline(VAR, spec, ["efficient"] * 6)
    assert eff.final_cached() == [174] * 6
    assert eff.reduction() == Fraction(680 - 174, 680)
    assert round(float(eff.reduction()) * 100, 2) == 74.41
    dem = analytic_timeline(VAR, spec, ["demanding"] * 6)
    assert dem.final_cached() == [430] * 6
    assert round(float(dem.reduction()) * 100, 2) == 36.76
    mix = analytic_timeline(VAR, spec, ["efficient"] * 5 + ["demanding"])
    assert mix.mean_final() == Fraction(5 * 174 + 430, 6)
    assert round(float(mix.mean_final()), 2) == 216.67
    assert round(float(mix.reduction()) * 100, 2) == 68.14


def test_analytic_timeline_small_walk():
    sched = ScaleSchedule((1, 2, 3, 4, 5))
    spec = derive_budgets(sched)
    (eff,) = analytic_timeline(sched, spec, ["efficient"]).layers
    assert [s.event for s in eff] == ["cached", "cached", "cached", "evicted", "skip_budget"]
    assert [s.cached_after for s in eff] == [1, 5, 14, 21, 21]
    (dem,) = analytic_timeline(sched, spec, ["demanding"]).layers
    # demanding from the first overflow: expands at scale 4, rolls r3 out at scale 5
    assert [s.event for s in dem] == ["cached", "cached", "cached", "expanded", "evicted"]
    assert [s.cached_after for s in dem] == [1, 5, 14, 30, 46]


@settings(max_examples=200)
@given(schedules(), st.data())
def test_analytic_timeline_respects_budget(sched, data):
    cds = data.draw(st.integers(0, min(2, sched.K)))
    lo = sched.condensed_tokens(cds) + 1
    total = total_tokens(sched)
    c_min = data.draw(st.integers(lo, max(lo, total)))
    c_max = data.draw(st.integers(c_min, c_min + total))
    spec = BudgetSpec(c_min, c_max, cds)
    classes = data.draw(st.lists(st.sampled_from(["efficient", "demanding"]), min_size=1, max_size=4))
    tl = analytic_timeline(sched, spec, classes)
    for steps in tl.layers:
        for s in steps:
            assert s.cached_after <= s.budget
    if c_min >= total:
        full = [sum(sched.tokens[:i]) for i in range(1, sched.K + 1)]
        for steps in analytic_timeline(sched, spec, ["efficient"]).layers:
            assert [s.cached_after for s in steps] == full
