import math

import numpy as np
import pytest

from amskv import numkernel as nk
from amskv.attn import inter_scale_similarity, upsample_keys
from amskv.cachecore import AmsKv, FullCache, SlidingWindow, StaticAlloc, validate_steps
from amskv.errors import ConfigError, ProtocolError
from amskv.schedule import BudgetSpec, ScaleSchedule, ThetaMode, derive_budgets, total_tokens
from amskv.toymodel import (
    DecodeState,
    GenerationTrace,
    ToyModelConfig,
    generate,
    init_model,
    similarity_stream,
)

SMALL = ScaleSchedule((1, 2, 3, 4, 5, 6))


def small_model(seed=0, **kw):
    return init_model(ToyModelConfig(schedule=SMALL, seed=seed, **kw))


def test_init_matrix_count_and_determinism():
    a, b = small_model(), small_model()
    assert len(a.matrices()) == 10
    assert all(np.array_equal(x, y) for x, y in zip(a.matrices(), b.matrices()))
    c = small_model(seed=1)
    assert not np.array_equal(a.layers[0].wq, c.layers[0].wq)


def test_config_validation():
    with pytest.raises(ConfigError):
        ToyModelConfig(n_layers=0)
    cfg = ToyModelConfig(schedule=SMALL, n_heads=3)
    assert ToyModelConfig.from_dict(cfg.to_dict()) == cfg


def test_degenerate_budget_matches_full_cache():
    model = small_model()
    total = total_tokens(SMALL)
    spec = BudgetSpec(total, total, 2, ThetaMode.absolute(0.0))
    ams = generate(model, AmsKv(), spec, compare_oracle=True)
    full = generate(model, FullCache(), spec, compare_oracle=True)
    assert all(np.array_equal(x, y) for x, y in zip(ams.tokens, full.tokens))
    assert ams.fidelity.rel_error == (0.0,) * SMALL.K
    assert ams.fidelity.cosine == (1.0,) * SMALL.K


def test_trace_is_byte_identical_across_runs():
    model = small_model()
    spec = derive_budgets(SMALL, theta=ThetaMode.quantile())
    assert generate(model, AmsKv(), spec).to_jsonl() == generate(model, AmsKv(), spec).to_jsonl()


def test_constant_embedding_gives_zero_similarity():
    model = small_model()
    model.embedding[:] = model.embedding[0]
    for lw in model.layers:
        lw.wk = np.eye(lw.wk.shape[0])
    spec = derive_budgets(SMALL, theta=ThetaMode.absolute(-1e-6))
    trace = generate(model, AmsKv(), spec)
    for scores in trace.similarities().values():
        assert all(abs(s) < 1e-9 for s in scores)
    assert {s["verdict"] for s in trace.steps} <= {None, "efficient"}


def test_noise_similarity_tracks_sigma_sqrt_n():
    rng = np.random.default_rng(0)
    sigma, prev = 0.3, rng.normal(size=(2, 16, 4))
    base = upsample_keys(prev, 4, 8)
    n = base.size
    scores = [inter_scale_similarity(base + sigma * rng.normal(size=base.shape), 8, prev, 4).score
              for _ in range(200)]
    # E[chi_n] = sqrt(2) Gamma((n+1)/2) / Gamma(n/2)
    e_chi = math.sqrt(2) * math.exp(math.lgamma((n + 1) / 2) - math.lgamma(n / 2))
    assert np.mean(scores) == pytest.approx(-sigma * e_chi, rel=0.01)


def test_similarity_stream_needs_previous_keys():
    model = small_model()
    state = DecodeState(model, AmsKv(), derive_budgets(SMALL))
    _, blocks, _ = state.forward(model.embedding[-1:], 1, 1)
    with pytest.raises(ProtocolError):
        similarity_stream(state, 0, blocks[0])


def test_similarity_stream_matches_trace():
    model = small_model()
    spec = derive_budgets(SMALL, theta=ThetaMode.absolute(-1e9))
    trace = generate(model, FullCache(), spec)
    state = DecodeState(model, FullCache(), spec)
    x = model.embedding[-1:].copy()
    for i, side in enumerate(SMALL.sides, start=1):
        _, blocks, _ = state.forward(x, i, side)
        sims = [similarity_stream(state, l, b) if i > 1 else None for l, b in enumerate(blocks)]
        state.commit(blocks, sims)
        for l, s in enumerate(sims):
            rec = next(r for r in trace.layer_steps(l) if r["scale"] == i)
            assert rec["similarity"] == (None if s is None else s.score)
        if i < SMALL.K:
            tok = trace.tokens[i - 1].ravel()
            emb = model.embedding[tok].reshape(side, side, -1)
            nxt = SMALL.sides[i]
            x = nk.bilinear_resize(emb, nxt, nxt).reshape(nxt * nxt, -1)


@pytest.mark.parametrize("policy", [AmsKv(), FullCache(), SlidingWindow(20), StaticAlloc("s1"), StaticAlloc("s2")])
def test_shapes_and_validator(policy):
    model = small_model(n_layers=3)
    spec = derive_budgets(SMALL, theta=ThetaMode.quantile())
    trace = generate(model, policy, spec)
    assert [g.shape for g in trace.tokens] == [(s, s) for s in SMALL.sides]
    assert all(0 <= g.min() and g.max() < model.config.vocab_size for g in trace.tokens)
    assert len(trace.steps) == 3 * SMALL.K
    if isinstance(policy, AmsKv):
        fleet = {}
        for r in trace.steps:
            fleet.setdefault(r["scale"], []).append(r["similarity"])
        for l in range(3):
            assert validate_steps(trace.layer_steps(l), spec, fleet) == []


def test_trace_roundtrip():
    trace = generate(small_model(), AmsKv(), derive_budgets(SMALL, theta=ThetaMode.quantile()), compare_oracle=True)
    text = trace.to_jsonl()
    back = GenerationTrace.from_jsonl(text)
    assert back.to_jsonl() == text
    assert all(np.array_equal(a, b) for a, b in zip(back.tokens, trace.tokens))


def test_capture_scale_collects_slices():
    trace = generate(small_model(), FullCache(), derive_budgets(SMALL), capture_scale=4)
    assert set(trace.slices) == {0, 1}
    assert {s.to_scale for s in trace.slices[0]} == {1, 2, 3, 4}


def test_generate_requires_spec():
    with pytest.raises(ConfigError):
        generate(small_model(), AmsKv(), None)
