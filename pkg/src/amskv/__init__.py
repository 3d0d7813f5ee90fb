"""Adaptive multi-scale KV caching for next-scale autoregressive decoding."""

__version__ = "0.1.0"
