import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import brute_density, naive_attention
from amskv import numkernel as nk
from amskv.attn import (
    AttentionSlice,
    attention_density,
    block_attention,
    compare_outputs,
    fidelity_report,
    full_context_oracle,
    inter_scale_similarity,
    upsample_keys,
)
from amskv.cachecore import KVBlock
from amskv.errors import CoverageError
from amskv.schedule import ScaleSchedule


def rand_blocks(rng, sides, heads, d):
    return [KVBlock(i, s, rng.normal(size=(heads, s * s, d)), rng.normal(size=(heads, s * s, d)))
            for i, s in enumerate(sides, start=1)]


def test_single_token_returns_its_value(backend):
    with nk.use_backend(backend):
        v = np.array([[[3.0, -1.0]]])
        out, _ = block_attention(np.ones((1, 1, 2)), [KVBlock(1, 1, np.ones((1, 1, 2)), v)])
    assert np.array_equal(out, v)


def test_identical_keys_average_values(backend):
    rng = np.random.default_rng(0)
    k = np.tile(rng.normal(size=(2, 1, 4)), (1, 4, 1))
    v = rng.normal(size=(2, 4, 4))
    with nk.use_backend(backend):
        out, _ = block_attention(rng.normal(size=(2, 3, 4)), [KVBlock(1, 2, k, v)])
    np.testing.assert_allclose(out, np.broadcast_to(v.mean(axis=1, keepdims=True), out.shape), atol=1e-12)


def test_block_attention_matches_naive(backend):
    rng = np.random.default_rng(1)
    blocks = rand_blocks(rng, (1, 2, 3), 2, 4)
    q = rng.normal(size=(2, 9, 4))
    keys = np.concatenate([b.keys for b in blocks], axis=1)
    values = np.concatenate([b.values for b in blocks], axis=1)
    with nk.use_backend(backend):
        fused, _ = block_attention(q, blocks)
        sliced, slices = block_attention(q, blocks, return_slices=True)
    ref = np.array(naive_attention(q, keys, values))
    assert np.max(np.abs(fused - ref)) < 1e-9
    assert np.max(np.abs(sliced - ref)) < 1e-9
    assert len(slices) == 2 * 3
    assert np.array_equal(full_context_oracle(blocks, q), fused)


def test_block_attention_head_dim_mismatch():
    b = KVBlock(1, 1, np.zeros((1, 1, 4)), np.zeros((1, 1, 4)))
    with pytest.raises(nk.ShapeError):
        block_attention(np.zeros((1, 1, 3)), [b])
    with pytest.raises(nk.ShapeError):
        block_attention(np.zeros((1, 1, 4)), [])


def uniform_slices(sched, target, heads=1):
    total = sum(sched.tokens[:target])
    t_j = sched.tokens[target - 1]
    return [AttentionSlice(target, i, h, np.full((t_j, sched.tokens[i - 1]), 1.0 / total))
            for h in range(heads) for i in range(1, target + 1)]


def test_density_uniform_closed_form():
    sched = ScaleSchedule((1, 2, 3, 4))
    table = attention_density(uniform_slices(sched, 4), sched)
    total = sum(sched.tokens)
    for i in range(1, 5):
        assert table.entries[(0, i)] == pytest.approx(16 / total, abs=1e-12)
        assert Fraction(table.entries[(0, i)]).limit_denominator(10**6) == Fraction(16, total)


def test_density_concentration():
    sched = ScaleSchedule((1, 2, 3))
    slices = [AttentionSlice(3, 1, 0, np.ones((9, 1))),
              AttentionSlice(3, 2, 0, np.zeros((9, 4))),
              AttentionSlice(3, 3, 0, np.zeros((9, 9)))]
    table = attention_density(slices, sched)
    assert table.entries == {(0, 1): 9.0, (0, 2): 0.0, (0, 3): 0.0}
    assert table.mass(0) == 9.0


def test_density_matches_brute_force_and_conserves():
    rng = np.random.default_rng(2)
    sched = ScaleSchedule((1, 2, 3))
    blocks = rand_blocks(rng, sched.sides, 2, 4)
    _, slices = block_attention(rng.normal(size=(2, 9, 4)), blocks, return_slices=True)
    table = attention_density(slices, sched)
    full = [np.concatenate([s.weights for s in slices if s.head == h], axis=1) for h in range(2)]
    ref = brute_density(full, sched.tokens, 3)
    for key, val in ref.items():
        assert abs(table.entries[key] - val) < 1e-9
    for h in table.heads:
        assert abs(table.mass(h) - 9) < 1e-6


def test_density_missing_slice():
    sched = ScaleSchedule((1, 2, 3))
    slices = uniform_slices(sched, 3)[:-1]
    with pytest.raises(CoverageError):
        attention_density(slices, sched)
    with pytest.raises(CoverageError):
        attention_density([], sched)


def test_similarity_exact_upsample_is_zero():
    rng = np.random.default_rng(3)
    prev = rng.normal(size=(2, 9, 4))
    sim = inter_scale_similarity(upsample_keys(prev, 3, 5), 5, prev, 3)
    assert abs(sim.score) < 1e-12 and all(abs(p) < 1e-12 for p in sim.per_head)


def test_similarity_constant_offset():
    rng = np.random.default_rng(4)
    prev = rng.normal(size=(3, 4, 4))
    curr = upsample_keys(prev, 2, 4) + 0.5
    sim = inter_scale_similarity(curr, 4, prev, 2)
    n = curr.size
    assert abs(sim.score - (-0.5 * math.sqrt(n))) < 1e-9
    assert abs(sim.rms - (-0.5)) < 1e-12


def test_similarity_head_permutation_invariant():
    rng = np.random.default_rng(5)
    prev, curr = rng.normal(size=(3, 4, 2)), rng.normal(size=(3, 9, 2))
    perm = [2, 0, 1]
    a = inter_scale_similarity(curr, 3, prev, 2)
    b = inter_scale_similarity(curr[perm], 3, prev[perm], 2)
    assert a.score == pytest.approx(b.score, abs=1e-12)
    assert sorted(a.per_head) == pytest.approx(sorted(b.per_head), abs=1e-12)


def test_similarity_shape_errors():
    with pytest.raises(nk.ShapeError):
        inter_scale_similarity(np.zeros((2, 4, 3)), 2, np.zeros((1, 1, 3)), 1)
    with pytest.raises(nk.ShapeError):
        inter_scale_similarity(np.zeros((1, 4, 3)), 3, np.zeros((1, 1, 3)), 1)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(1, 6), st.integers(0, 2**31))
def test_similarity_nonpositive(side_prev, extra, seed):
    rng = np.random.default_rng(seed)
    side_curr = side_prev + extra
    sim = inter_scale_similarity(rng.normal(size=(2, side_curr**2, 3)), side_curr,
                                 rng.normal(size=(2, side_prev**2, 3)), side_prev)
    assert sim.score <= 0 and all(p <= 0 for p in sim.per_head)
    assert sim.score <= max(sim.per_head) + 1e-12


def test_compare_outputs_and_fidelity():
    a = np.array([1.0, 2.0])
    assert compare_outputs(a, a) == (0.0, 1.0)
    err, cos = compare_outputs(np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    assert err == pytest.approx(math.sqrt(2)) and cos == pytest.approx(0.0)
    rep = fidelity_report([a, 2 * a], [a, a])
    assert rep.scales == (1, 2) and rep.rel_error == (0.0, pytest.approx(1.0))
    assert rep.mean_cosine == pytest.approx(1.0)
    assert [r["scale"] for r in rep.rows()] == [1, 2]
