"""Tokenization, the spatiotemporal encoder, and directional pooling.

The encoder alternates blocks of per-frame spatial attention with one
temporal attention layer per unit (3:1 by default).  Temporal attention
runs per spatial slot over the frame axis; classification tokens bypass
temporal layers unchanged.  The encoded grid is then pooled into a
horizontal sequence (over columns, then frames) and a vertical sequence
(over rows, then frames), each carrying the pooled class token in slot 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers
from .params import ParamStore
from .tensor import NumericsError, Tensor, concat


@dataclass(frozen=True)
class STEConfig:
    T: int = 4
    M: int = 32
    P: int = 8
    E: int = 32
    heads: int = 4
    units: int = 3
    spatial_layers_per_unit: int = 3
    temporal_layers_per_unit: int = 1
    pooling: str = "mean"

    @property
    def L(self) -> int:
        return self.M // self.P

    @property
    def tokens_per_frame(self) -> int:
        return self.L * self.L + 1

    def validate(self) -> None:
        if self.M % self.P != 0:
            raise NumericsError(f"frame size {self.M} not divisible by patch size {self.P}")
        if self.E % self.heads != 0:
            raise NumericsError(f"width {self.E} not divisible by {self.heads} heads")
        if self.units < 1:
            raise NumericsError("at least one encoder unit is required")
        if self.pooling not in ("mean", "max"):
            raise NumericsError(f"unknown pooling: {self.pooling!r}")
        if self.T < 1:
            raise NumericsError("clips need at least one frame")


@dataclass
class DirectionalSequence:
    """(L+1) x E sequence: slot 0 is the pooled class token."""

    tokens: Tensor
    direction: str  # "horizontal" | "vertical"

    @property
    def content(self) -> Tensor:
        return self.tokens[1:, :]


def _temporal_prefix(unit: int, layer: int, per_unit: int) -> str:
    if per_unit == 1:
        return f"ste.unit{unit}.temporal"
    return f"ste.unit{unit}.temporal{layer}"


def init_ste_params(store: ParamStore, cfg: STEConfig, rng, mlp_ratio: int = 4) -> None:
    cfg.validate()
    patch_dim = 3 * cfg.P * cfg.P
    layers.init_linear(store, "embed.patch", patch_dim, cfg.E, rng)
    store.add("embed.cls", rng.normal(0.0, layers.EMBED_STD, size=cfg.E))
    store.add(
        "embed.spatial", rng.normal(0.0, layers.EMBED_STD, size=(cfg.tokens_per_frame, cfg.E))
    )
    store.add("embed.temporal", rng.normal(0.0, layers.EMBED_STD, size=(cfg.T, cfg.E)))
    for u in range(cfg.units):
        for s in range(cfg.spatial_layers_per_unit):
            layers.init_transformer_layer(store, f"ste.unit{u}.spatial{s}", cfg.E, mlp_ratio, rng)
        for t in range(cfg.temporal_layers_per_unit):
            prefix = _temporal_prefix(u, t, cfg.temporal_layers_per_unit)
            layers.init_transformer_layer(store, prefix, cfg.E, mlp_ratio, rng)


def extract_patches(frames: np.ndarray, patch: int) -> np.ndarray:
    """(T, M, M, 3) -> (T, L*L, 3*P*P), patches in row-major (i, j) order."""
    t, m, m2, c = frames.shape
    if m != m2 or c != 3:
        raise NumericsError(f"expected square RGB frames, got {frames.shape}")
    if m % patch != 0:
        raise NumericsError(f"frame size {m} not divisible by patch size {patch}")
    l = m // patch
    tiles = frames.reshape(t, l, patch, l, patch, c).transpose(0, 1, 3, 2, 4, 5)
    return tiles.reshape(t, l * l, patch * patch * c)


def tokenize(frames: np.ndarray, p: ParamStore, cfg: STEConfig) -> Tensor:
    """Embed a clip into the (T, L^2+1, E) token tensor.

    Slot 0 of each frame is the shared class token; every token receives
    the frame-shared spatial embedding plus its frame's temporal embedding.
    """
    if frames.shape[0] != cfg.T:
        raise NumericsError(f"clip has {frames.shape[0]} frames, config expects {cfg.T}")
    patches = Tensor(extract_patches(np.asarray(frames, dtype=np.float64), cfg.P))
    proj = patches @ p["embed.patch.w"] + p["embed.patch.b"]
    cls = p["embed.cls"].reshape(1, 1, cfg.E) * Tensor(np.ones((cfg.T, 1, 1)))
    x = concat([cls, proj], axis=1)
    x = x + p["embed.spatial"].reshape(1, cfg.tokens_per_frame, cfg.E)
    x = x + p["embed.temporal"].reshape(cfg.T, 1, cfg.E)
    return x


def ste_forward(x: Tensor, cfg: STEConfig, p: ParamStore) -> Tensor:
    """Run the asymmetric spatial/temporal attention stack; shape-preserving."""
    if x.shape != (cfg.T, cfg.tokens_per_frame, cfg.E):
        raise NumericsError(
            f"token tensor {x.shape} does not match config "
            f"{(cfg.T, cfg.tokens_per_frame, cfg.E)}"
        )
    for u in range(cfg.units):
        for s in range(cfg.spatial_layers_per_unit):
            x = layers.transformer_layer(x, p, f"ste.unit{u}.spatial{s}", cfg.heads)
        for t in range(cfg.temporal_layers_per_unit):
            prefix = _temporal_prefix(u, t, cfg.temporal_layers_per_unit)
            content = x[:, 1:, :].swapaxes(0, 1)  # (L^2, T, E)
            content = layers.transformer_layer(content, p, prefix, cfg.heads)
            x = concat([x[:, :1, :], content.swapaxes(0, 1)], axis=1)
    return x


def _pool(x: Tensor, axis: int, pooling: str) -> Tensor:
    return x.mean(axis=axis) if pooling == "mean" else x.max(axis=axis)


def directional_pool(
    z: Tensor, cfg: STEConfig
) -> tuple[DirectionalSequence, DirectionalSequence]:
    """Collapse the token grid into horizontal and vertical sequences.

    Horizontal content slot i pools patch tokens across columns j, then
    frames; vertical slot j pools across rows i, then frames.  Both carry
    the same temporally pooled class token in slot 0.
    """
    l = cfg.L
    grid = z[:, 1:, :].reshape(cfg.T, l, l, cfg.E)
    horiz = _pool(_pool(grid, 2, cfg.pooling), 0, cfg.pooling)  # over columns, then frames
    vert = _pool(_pool(grid, 1, cfg.pooling), 0, cfg.pooling)  # over rows, then frames
    cls = _pool(z[:, 0, :], 0, cfg.pooling).reshape(1, cfg.E)
    return (
        DirectionalSequence(concat([cls, horiz], axis=0), "horizontal"),
        DirectionalSequence(concat([cls, vert], axis=0), "vertical"),
    )
