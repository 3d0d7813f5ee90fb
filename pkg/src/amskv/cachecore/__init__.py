"""Cache policies operating on whole-scale KV blocks."""
from .amskv import LayerCache, amskv_step, classify_layer, clru_evict, context_view
from .blocks import CacheDecision, DecisionKind, KVBlock
from .policies import (
    GROUPS,
    POLICY_TYPES,
    Ablation,
    AblationLayer,
    AmsKv,
    FullCache,
    FullCacheLayer,
    SinkWindow,
    SlidingWindow,
    SlidingWindowLayer,
    StaticAlloc,
    StaticAllocLayer,
    baseline_step,
    make_layer_cache,
    policy_from_dict,
    policy_to_dict,
    static_large_layers,
)
from .validate import validate_steps

__all__ = [
    "GROUPS",
    "POLICY_TYPES",
    "Ablation",
    "AblationLayer",
    "AmsKv",
    "CacheDecision",
    "DecisionKind",
    "FullCache",
    "FullCacheLayer",
    "KVBlock",
    "LayerCache",
    "SinkWindow",
    "SlidingWindow",
    "SlidingWindowLayer",
    "StaticAlloc",
    "StaticAllocLayer",
    "amskv_step",
    "baseline_step",
    "classify_layer",
    "clru_evict",
    "context_view",
    "make_layer_cache",
    "policy_from_dict",
    "policy_to_dict",
    "static_large_layers",
    "validate_steps",
]
