"""Directional cross attention and the classifier heads.

Each decoder layer attends across directions simultaneously: the
horizontal output queries with the vertical stream over horizontal
keys/values (and vice versa), with the cross-direction diffusion
similarity ``exp(-tau1 * D)`` added to every head's scores on the content
block.  Class-token rows/columns receive zero bias.  The heads read the
class tokens into one video logit pair and two directional logit pairs,
and expose the pooled feature used by the triplet loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers
from .params import ParamStore
from .tensor import NumericsError, Tensor, concat

__all__ = [
    "DicaConfig",
    "PredictionBundle",
    "init_dica_params",
    "init_mdc_params",
    "dica_layer",
    "dica_stack",
    "mdc_heads",
]


@dataclass(frozen=True)
class DicaConfig:
    layers: int = 6
    heads: int = 4
    E: int = 32
    tau1_init: float = 1.0

    def validate(self) -> None:
        if self.layers < 1:
            raise NumericsError("decoder needs at least one layer")
        if self.E % self.heads != 0:
            raise NumericsError(f"width {self.E} not divisible by {self.heads} heads")


@dataclass
class PredictionBundle:
    """Video and directional logits plus the pooled 2E feature."""

    y: Tensor
    y_h: Tensor
    y_v: Tensor
    f_pool: Tensor


def init_dica_params(store: ParamStore, cfg: DicaConfig, rng, mlp_ratio: int = 4) -> None:
    cfg.validate()
    for l in range(cfg.layers):
        for direction in ("h", "v"):
            layers.init_transformer_layer(
                store, f"dica.layer{l}.{direction}", cfg.E, mlp_ratio, rng
            )
    store.add("dica.tau1", np.array([cfg.tau1_init]))


def init_mdc_params(store: ParamStore, width: int, rng) -> None:
    layers.init_linear(store, "mdc.head_h", width, 2, rng)
    layers.init_linear(store, "mdc.head_v", width, 2, rng)
    layers.init_linear(store, "mdc.head_video", 2 * width, 2, rng)


def _padded_bias(d_block: Tensor, tau1: Tensor) -> Tensor:
    """exp(-tau1 * D) on the content block, zero on the class row/column."""
    l = d_block.shape[0]
    if d_block.shape != (l, l):
        raise NumericsError(f"diffusion block must be square, got {d_block.shape}")
    content = (-(tau1 * d_block)).exp()
    top = Tensor(np.zeros((1, l + 1)))
    left = Tensor(np.zeros((l, 1)))
    return concat([top, concat([left, content], axis=1)], axis=0)


def dica_layer(
    z_h: Tensor,
    z_v: Tensor,
    d_hv: Tensor,
    d_vh: Tensor,
    cfg: DicaConfig,
    p: ParamStore,
    layer: int,
    bias_enabled: bool = True,
) -> tuple[Tensor, Tensor]:
    """One simultaneous cross-attention layer over both directional sequences."""
    n = z_h.shape[0]
    l = n - 1
    for block in (d_hv, d_vh):
        if block.shape != (l, l):
            raise NumericsError(
                f"diffusion block {block.shape} does not match {l} content tokens"
            )
    tau1 = p["dica.tau1"]
    h_pre = f"dica.layer{layer}.h"
    v_pre = f"dica.layer{layer}.v"
    hn = layers.norm(z_h, p, f"{h_pre}.ln1")
    vn = layers.norm(z_v, p, f"{v_pre}.ln1")
    bias_h = _padded_bias(d_vh, tau1) if bias_enabled else None
    bias_v = _padded_bias(d_hv, tau1) if bias_enabled else None
    # both outputs computed from the same inputs: no sequential update
    out_h = z_h + layers.multi_head_attention(vn, hn, p, h_pre, cfg.heads, bias_h)
    out_v = z_v + layers.multi_head_attention(hn, vn, p, v_pre, cfg.heads, bias_v)
    out_h = layers.mlp_sublayer(out_h, p, h_pre)
    out_v = layers.mlp_sublayer(out_v, p, v_pre)
    return out_h, out_v


def dica_stack(
    z_h: Tensor,
    z_v: Tensor,
    d_hv: Tensor,
    d_vh: Tensor,
    cfg: DicaConfig,
    p: ParamStore,
    bias_enabled: bool = True,
) -> tuple[Tensor, Tensor]:
    """cfg.layers sequential decoder layers; the same diffusion blocks feed each."""
    for layer in range(cfg.layers):
        z_h, z_v = dica_layer(z_h, z_v, d_hv, d_vh, cfg, p, layer, bias_enabled)
    return z_h, z_v


def mdc_heads(zp_h: Tensor, zp_v: Tensor, p: ParamStore) -> PredictionBundle:
    """Read class tokens into logits; pool content tokens into the 2E feature."""
    e = zp_h.shape[1]
    cls_h = zp_h[0:1, :]
    cls_v = zp_v[0:1, :]
    y_h = layers.linear(cls_h, p, "mdc.head_h").reshape(2)
    y_v = layers.linear(cls_v, p, "mdc.head_v").reshape(2)
    y = layers.linear(concat([cls_h, cls_v], axis=1), p, "mdc.head_video").reshape(2)
    f_pool = concat([zp_h[1:, :].mean(axis=0), zp_v[1:, :].mean(axis=0)], axis=0)
    if f_pool.shape != (2 * e,):
        raise NumericsError(f"pooled feature has shape {f_pool.shape}")
    return PredictionBundle(y=y, y_h=y_h, y_v=y_v, f_pool=f_pool)
