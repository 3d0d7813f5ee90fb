"""A tiny seeded next-scale transformer that drives the cache policies end to end.

Architecture per scale: input grid -> ``n_layers`` x (RMS norm, multi-head
block attention over the layer's cache, output projection, residual) ->
RMS norm -> vocabulary head -> greedy argmax tokens. Scale 1 starts from a
fixed start embedding (the last embedding row); scale k > 1 starts from the
token embeddings of scale k-1, bilinearly upsampled onto the new grid.
There is no MLP, no positional encoding and no quantizer.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import numkernel as nk
from .attn import FidelityReport, block_attention, fidelity_report, inter_scale_similarity
from .cachecore import (
    AmsKv,
    FullCache,
    KVBlock,
    StaticAlloc,
    make_layer_cache,
    policy_from_dict,
    policy_to_dict,
    static_large_layers,
)
from .errors import ConfigError, ProtocolError
from .schedule import BudgetSpec, ScaleSchedule, spec_from_dict, spec_to_dict

TRACE_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ToyModelConfig:
    n_layers: int = 2
    n_heads: int = 2
    head_dim: int = 8
    vocab_size: int = 32
    schedule: ScaleSchedule = field(default_factory=ScaleSchedule)
    seed: int = 0

    def __post_init__(self):
        if self.n_layers < 2:
            raise ConfigError(f"toy model needs n_layers >= 2, got {self.n_layers}")
        if self.vocab_size < 2:
            raise ConfigError(f"toy model needs vocab_size >= 2, got {self.vocab_size}")
        if self.n_heads < 1 or self.head_dim < 1:
            raise ConfigError("n_heads and head_dim must be positive")

    @property
    def d_model(self) -> int:
        return self.n_heads * self.head_dim

    def to_dict(self) -> dict:
        return {"n_layers": self.n_layers, "n_heads": self.n_heads, "head_dim": self.head_dim,
                "vocab_size": self.vocab_size, "schedule": list(self.schedule.sides), "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "ToyModelConfig":
        d = dict(d)
        d["schedule"] = ScaleSchedule(tuple(d["schedule"]))
        return cls(**d)


@dataclass
class LayerWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray


@dataclass
class ToyModel:
    config: ToyModelConfig
    embedding: np.ndarray  # (vocab_size + 1, d_model); last row is the start embedding
    layers: list
    head: np.ndarray  # (d_model, vocab_size)

    def matrices(self) -> list:
        mats = [self.embedding, self.head]
        for lw in self.layers:
            mats += [lw.wq, lw.wk, lw.wv, lw.wo]
        return mats


def init_model(config: ToyModelConfig) -> ToyModel:
    """Draw every weight matrix with ``seeded_init`` from per-matrix sub-seeds."""
    d = config.d_model
    n_mats = 2 + 4 * config.n_layers
    sub_seeds = [int(s) for s in nk.prng.splitmix64(config.seed, n_mats)]
    scale = 1.0 / np.sqrt(d)
    embedding = nk.seeded_init(sub_seeds[0], (config.vocab_size + 1, d), "gaussian")
    head = nk.seeded_init(sub_seeds[1], (d, config.vocab_size), "gaussian") * scale
    layers = []
    for l in range(config.n_layers):
        s = sub_seeds[2 + 4 * l: 6 + 4 * l]
        layers.append(LayerWeights(*(nk.seeded_init(x, (d, d), "gaussian") * scale for x in s)))
    return ToyModel(config, embedding, layers, head)


def rms_norm(x, eps=1e-6):
    return x / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps)


def _split_heads(x, n_heads):
    t, d = x.shape
    return np.ascontiguousarray(x.reshape(t, n_heads, d // n_heads).transpose(1, 0, 2))


def _merge_heads(x):
    h, t, d = x.shape
    return x.transpose(1, 0, 2).reshape(t, h * d)


class DecodeState:
    """Per-layer caches plus the one-step transient slot of previous-scale keys."""

    def __init__(self, model: ToyModel, policy, spec: BudgetSpec, large_layers=()):
        cfg = model.config
        self.model = model
        self.caches = [make_layer_cache(policy, spec, cfg.schedule, l, large_layers) for l in range(cfg.n_layers)]
        self.prev_keys: list = [None] * cfg.n_layers
        self.prev_side = None

    def forward(self, x, scale, side, capture=None):
        """Run one scale through every layer, attending pre-update caches.

        Returns the final hidden states and, per layer, the fresh block and
        the number of context tokens it attended. If ``capture`` is a dict,
        the attention slices of each layer are stored in it by layer index.
        """
        h_count = self.model.config.n_heads
        blocks, contexts = [], []
        for l, lw in enumerate(self.model.layers):
            h = rms_norm(x)
            q = _split_heads(nk.matmul(h, lw.wq), h_count)
            k = _split_heads(nk.matmul(h, lw.wk), h_count)
            v = _split_heads(nk.matmul(h, lw.wv), h_count)
            block = KVBlock(scale, side, k, v)
            ctx = self.caches[l].context(block)
            out, _ = block_attention(q, ctx)
            if capture is not None:
                capture[l] = block_attention(q, ctx, return_slices=True)[1]
            x = x + nk.matmul(_merge_heads(out), lw.wo)
            blocks.append(block)
            contexts.append(sum(b.tokens for b in ctx))
        return x, blocks, contexts

    def commit(self, blocks, similarities):
        """Offer each layer's block to its cache, with the whole fleet's scores."""
        scores = [None if s is None else s.score for s in similarities]
        fleet = None if any(s is None for s in scores) else scores
        decisions = [cache.step(b, sc, fleet) for cache, b, sc in zip(self.caches, blocks, scores)]
        self.prev_keys = [b.keys for b in blocks]
        self.prev_side = blocks[0].side
        return decisions


def similarity_stream(state: DecodeState, layer: int, block: KVBlock):
    """Similarity of ``block``'s keys to the layer's previous-scale keys."""
    prev = state.prev_keys[layer]
    if prev is None:
        raise ProtocolError(f"layer {layer}: no previous-scale keys retained for scale {block.scale_index}")
    return inter_scale_similarity(block.keys, block.side, prev, state.prev_side)


@dataclass
class GenerationTrace:
    config: ToyModelConfig
    policy: object
    spec: BudgetSpec
    large_layers: tuple
    tokens: list  # per scale, (side, side) int arrays
    steps: list  # per (scale, layer) dicts
    fidelity: FidelityReport | None = None
    meta: dict = field(default_factory=dict)
    slices: dict | None = None  # layer -> attention slices; never serialised

    def layer_steps(self, layer: int) -> list:
        return [s for s in self.steps if s["layer"] == layer]

    def similarities(self):
        """``{layer: [score per scale >= 2]}``."""
        out = {}
        for s in self.steps:
            if s["similarity"] is not None:
                out.setdefault(s["layer"], []).append(s["similarity"])
        return out

    def to_jsonl(self) -> str:
        lines = [{
            "schema_version": TRACE_SCHEMA_VERSION,
            "type": "header",
            "model": self.config.to_dict(),
            "policy": policy_to_dict(self.policy),
            "spec": spec_to_dict(self.spec),
            "large_layers": list(self.large_layers),
            "meta": self.meta,
        }]
        for i, grid in enumerate(self.tokens, start=1):
            rec = {"type": "scale", "scale": i, "tokens": grid.tolist()}
            if self.fidelity is not None:
                rec["rel_error"] = self.fidelity.rel_error[i - 1]
                rec["cosine"] = self.fidelity.cosine[i - 1]
            lines.append(rec)
        lines += [{"type": "step", **s} for s in self.steps]
        return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in lines)

    @classmethod
    def from_jsonl(cls, text: str) -> "GenerationTrace":
        records = [json.loads(line) for line in text.splitlines() if line.strip()]
        if not records or records[0].get("type") != "header":
            raise ValueError("trace does not start with a header record")
        head = records[0]
        if head.get("schema_version") != TRACE_SCHEMA_VERSION:
            raise ValueError(f"unsupported trace schema_version {head.get('schema_version')}")
        scales = [r for r in records if r["type"] == "scale"]
        steps = [{k: v for k, v in r.items() if k != "type"} for r in records if r["type"] == "step"]
        fidelity = None
        if scales and "rel_error" in scales[0]:
            fidelity = FidelityReport(tuple(r["scale"] for r in scales), tuple(r["rel_error"] for r in scales),
                                      tuple(r["cosine"] for r in scales))
        return cls(ToyModelConfig.from_dict(head["model"]), policy_from_dict(head["policy"]),
                   spec_from_dict(head["spec"]), tuple(head["large_layers"]),
                   [np.asarray(r["tokens"], dtype=np.int64) for r in scales], steps, fidelity,
                   head.get("meta", {}))


def calibrate_layer_scores(model: ToyModel, spec: BudgetSpec) -> list:
    """Mean inter-scale similarity per layer over a full-cache run."""
    trace = generate(model, FullCache(), spec)
    sims = trace.similarities()
    return [float(np.mean(sims[l])) if sims.get(l) else 0.0 for l in range(model.config.n_layers)]


def generate(model: ToyModel, policy=None, spec: BudgetSpec | None = None, compare_oracle: bool = False,
             layer_scores=None, capture_scale: int | None = None) -> GenerationTrace:
    """Greedy coarse-to-fine decoding under ``policy``.

    With ``compare_oracle`` a full-cache pass is run alongside on the same
    chosen tokens (teacher forcing) and the final hidden states of each scale
    are compared. ``capture_scale`` materialises attention slices for that
    scale into ``trace.slices``.
    """
    cfg = model.config
    schedule = cfg.schedule
    policy = AmsKv() if policy is None else policy
    if spec is None:
        raise ConfigError("a BudgetSpec is required")
    if isinstance(policy, (AmsKv, StaticAlloc)):
        spec.validate(schedule)
    large = ()
    if isinstance(policy, StaticAlloc):
        if policy.strategy == "s2" and layer_scores is None:
            layer_scores = calibrate_layer_scores(model, spec)
        large = tuple(static_large_layers(policy.strategy, cfg.n_layers, policy.large_fraction, layer_scores))

    state = DecodeState(model, policy, spec, large)
    oracle = DecodeState(model, FullCache(), spec) if compare_oracle else None
    x = model.embedding[-1:].copy()
    grids, steps, outs, ref_outs = [], [], [], []
    captured = None
    for i, side in enumerate(schedule.sides, start=1):
        capture = {} if i == capture_scale else None
        h, blocks, contexts = state.forward(x, i, side, capture)
        if capture is not None:
            captured = capture
        sims = [similarity_stream(state, l, b) if i > 1 else None for l, b in enumerate(blocks)]
        decisions = state.commit(blocks, sims)
        for l, (d, sim, ctx) in enumerate(zip(decisions, sims, contexts)):
            steps.append({
                "layer": l, "scale": i, "side": side,
                "similarity": d.sim_score, "similarity_rms": None if sim is None else sim.rms,
                "verdict": d.verdict, "decision": d.kind.value, "evicted": list(d.evicted),
                "budget": d.budget, "cached_scales": list(d.cached_scales),
                "cached_tokens": d.cached_tokens, "context_tokens": ctx,
            })
        if oracle is not None:
            ref, ref_blocks, _ = oracle.forward(x, i, side)
            oracle.commit(ref_blocks, [None] * cfg.n_layers)
            outs.append(h)
            ref_outs.append(ref)
        logits = nk.matmul(rms_norm(h), model.head)
        tokens = np.argmax(logits, axis=1)
        grids.append(tokens.reshape(side, side).astype(np.int64))
        if i < schedule.K:
            nxt = schedule.sides[i]
            emb = model.embedding[tokens].reshape(side, side, cfg.d_model)
            x = nk.bilinear_resize(emb, nxt, nxt).reshape(nxt * nxt, cfg.d_model)
    fidelity = fidelity_report(outs, ref_outs) if oracle is not None else None
    return GenerationTrace(cfg, policy, spec, large, grids, steps, fidelity, slices=captured)
