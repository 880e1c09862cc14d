"""The full pipeline: tokenize, encode, diffuse, decode, classify."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import dica, idm, ste
from .params import ParamStore
from .tensor import Tensor, no_grad


@dataclass(frozen=True)
class ModelConfig:
    ste: ste.STEConfig
    dica: dica.DicaConfig
    k_n: int = 7
    t_diffusion: int = 20
    t_grad: int = 5
    diffusion_path: str = "hybrid"  # hybrid | iterative | spectral
    mu_init: float = 0.05
    tau2_init: float = 1.0
    dica_bias_enabled: bool = True
    mlp_ratio: int = 4

    def for_gradcheck(self) -> "ModelConfig":
        """Pure matrix-power diffusion at the truncated step count.

        Central differences then see exactly the function the tape
        differentiates.
        """
        return replace(
            self,
            diffusion_path="iterative",
            t_diffusion=min(self.t_diffusion, self.t_grad),
        )

    def for_eval(self) -> "ModelConfig":
        return replace(self, diffusion_path="spectral")


@dataclass
class ForwardResult:
    bundle: dica.PredictionBundle
    z_h: ste.DirectionalSequence
    z_v: ste.DirectionalSequence
    diffusion: idm.DiffusionResult


def init_model_params(cfg: ModelConfig, rng) -> ParamStore:
    if isinstance(rng, int):
        rng = np.random.default_rng(rng)
    store = ParamStore()
    ste.init_ste_params(store, cfg.ste, rng, cfg.mlp_ratio)
    dica.init_dica_params(store, cfg.dica, rng, cfg.mlp_ratio)
    dica.init_mdc_params(store, cfg.dica.E, rng)
    store.add("idm.mu", np.array([cfg.mu_init]))
    store.add("da.tau2", np.array([cfg.tau2_init]))
    return store


def forward_clip(frames: np.ndarray, params: ParamStore, cfg: ModelConfig) -> ForwardResult:
    """Run one clip through the whole pipeline."""
    x = ste.tokenize(frames, params, cfg.ste)
    z = ste.ste_forward(x, cfg.ste, params)
    z_h, z_v = ste.directional_pool(z, cfg.ste)
    diffusion = idm.diffusion_distances(
        z_h,
        z_v,
        cfg.k_n,
        params["idm.mu"],
        cfg.t_diffusion,
        cfg.diffusion_path,
        cfg.t_grad,
    )
    zp_h, zp_v = dica.dica_stack(
        z_h.tokens,
        z_v.tokens,
        diffusion.blocks.hv,
        diffusion.blocks.vh,
        cfg.dica,
        params,
        cfg.dica_bias_enabled,
    )
    bundle = dica.mdc_heads(zp_h, zp_v, params)
    return ForwardResult(bundle=bundle, z_h=z_h, z_v=z_v, diffusion=diffusion)


def randomize_for_gradcheck(
    store: ParamStore, rng, cfg: ModelConfig | None = None, frames: np.ndarray | None = None
) -> None:
    """Move parameters to a well-conditioned point for derivative checking.

    At the training init, attention is nearly uniform and the diffusion
    graph mixes to stationarity within a few steps, so query/key and
    scalar gradients sit below the central-difference noise floor.  Spread
    weights give every parameter measurable influence; when a sample clip
    is supplied, the kernel scale is calibrated so typical node distances
    land where exp(-mu d^2) actually varies.  Derivative correctness is
    point-independent.
    """
    if isinstance(rng, int):
        rng = np.random.default_rng(rng)
    for name, t in store.items():
        if name in ("idm.mu", "dica.tau1", "da.tau2"):
            t.data = np.array([1.0])
        elif name.endswith(".w") and t.data.ndim == 2:
            t.data = rng.normal(0.0, 0.3, t.data.shape)
        else:
            t.data = t.data + rng.normal(0.0, 0.25, t.data.shape)
    if cfg is not None and frames is not None:
        with no_grad():
            x = ste.tokenize(frames, store, cfg.ste)
            z_h, z_v = ste.directional_pool(ste.ste_forward(x, cfg.ste, store), cfg.ste)
            nodes = np.concatenate([z_h.content.data, z_v.content.data], axis=0)
        sq = ((nodes[:, None, :] - nodes[None, :, :]) ** 2).sum(-1)
        median = float(np.median(sq[sq > 0]))
        store["idm.mu"].data = np.array([1.0 / max(median, 1e-9)])


def fake_probability(frames: np.ndarray, params: ParamStore, cfg: ModelConfig) -> float:
    """Probability that a clip is fake, from the video logits (label 1 = fake)."""
    with no_grad():
        result = forward_clip(frames, params, cfg.for_eval())
        logits = result.bundle.y.data
    shifted = np.exp(logits - logits.max())
    return float(shifted[1] / shifted.sum())
