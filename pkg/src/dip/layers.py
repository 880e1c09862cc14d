"""Shared pre-norm transformer building blocks.

Each attention or MLP sublayer wraps its core in layer normalization and a
residual connection; zeroing the output projections (``*.out`` and
``*.mlp.fc2``) therefore turns any stack built from these blocks into an
exact identity.
"""

from __future__ import annotations

import math

import numpy as np

from .params import ParamStore
from .tensor import NumericsError, Tensor, biased_attention, gelu, layer_norm

EMBED_STD = 0.1


def init_linear(store: ParamStore, prefix: str, n_in: int, n_out: int, rng, bias: bool = True) -> None:
    # fan-scaled init: at width 32 the fixed 0.02 used by large ViTs starves
    # signal propagation and training never leaves the uniform-attention regime
    std = math.sqrt(2.0 / (n_in + n_out))
    store.add(f"{prefix}.w", rng.normal(0.0, std, size=(n_in, n_out)))
    if bias:
        store.add(f"{prefix}.b", np.zeros(n_out))


def init_layer_norm(store: ParamStore, prefix: str, width: int) -> None:
    store.add(f"{prefix}.w", np.ones(width))
    store.add(f"{prefix}.b", np.zeros(width))


def init_transformer_layer(store: ParamStore, prefix: str, width: int, mlp_ratio: int, rng) -> None:
    init_layer_norm(store, f"{prefix}.ln1", width)
    # no key bias: it shifts every score in a row equally, which softmax
    # cancels exactly, leaving a parameter with an identically zero gradient
    for proj in ("q", "v", "out"):
        init_linear(store, f"{prefix}.{proj}", width, width, rng)
    init_linear(store, f"{prefix}.k", width, width, rng, bias=False)
    init_layer_norm(store, f"{prefix}.ln2", width)
    init_linear(store, f"{prefix}.mlp.fc1", width, width * mlp_ratio, rng)
    init_linear(store, f"{prefix}.mlp.fc2", width * mlp_ratio, width, rng)


def linear(x: Tensor, p: ParamStore, prefix: str) -> Tensor:
    out = x @ p[f"{prefix}.w"]
    if f"{prefix}.b" in p:
        out = out + p[f"{prefix}.b"]
    return out


def norm(x: Tensor, p: ParamStore, prefix: str) -> Tensor:
    return layer_norm(x, p[f"{prefix}.w"], p[f"{prefix}.b"])


def split_heads(x: Tensor, heads: int) -> Tensor:
    """(..., n, E) -> (..., heads, n, E/heads)."""
    *lead, n, e = x.shape
    if e % heads != 0:
        raise NumericsError(f"width {e} not divisible by {heads} heads")
    return x.reshape(*lead, n, heads, e // heads).swapaxes(-3, -2)


def merge_heads(x: Tensor) -> Tensor:
    *lead, heads, n, dh = x.shape
    return x.swapaxes(-3, -2).reshape(*lead, n, heads * dh)


def multi_head_attention(
    q_src: Tensor,
    kv_src: Tensor,
    p: ParamStore,
    prefix: str,
    heads: int,
    bias: Tensor | None = None,
) -> Tensor:
    """Projected multi-head attention; `bias` is added to every head's scores."""
    q = split_heads(linear(q_src, p, f"{prefix}.q"), heads)
    k = split_heads(linear(kv_src, p, f"{prefix}.k"), heads)
    v = split_heads(linear(kv_src, p, f"{prefix}.v"), heads)
    ctx = merge_heads(biased_attention(q, k, v, bias))
    return linear(ctx, p, f"{prefix}.out")


def self_attention_sublayer(
    x: Tensor, p: ParamStore, prefix: str, heads: int, bias: Tensor | None = None
) -> Tensor:
    xn = norm(x, p, f"{prefix}.ln1")
    return x + multi_head_attention(xn, xn, p, prefix, heads, bias)


def mlp_sublayer(x: Tensor, p: ParamStore, prefix: str) -> Tensor:
    h = norm(x, p, f"{prefix}.ln2")
    return x + linear(gelu(linear(h, p, f"{prefix}.mlp.fc1")), p, f"{prefix}.mlp.fc2")


def transformer_layer(
    x: Tensor, p: ParamStore, prefix: str, heads: int, bias: Tensor | None = None
) -> Tensor:
    return mlp_sublayer(self_attention_sublayer(x, p, prefix, heads, bias), p, prefix)


def zero_output_projections(store: ParamStore) -> None:
    """Zero every residual branch (testing hook: stacks become identities)."""
    for name, t in store.items():
        if name.endswith((".out.w", ".out.b", ".mlp.fc2.w", ".mlp.fc2.b")):
            t.data = np.zeros_like(t.data)
