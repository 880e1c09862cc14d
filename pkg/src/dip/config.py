"""Flat JSON run configuration shared by every CLI subcommand.

Defaults reproduce the desk-scale acceptance runs.  Unknown keys are hard
errors, as are out-of-range values; error messages name the offending
field.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .dica import DicaConfig
from .model import ModelConfig
from .ste import STEConfig
from .synth import SynthConfig, SynthError
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # global
    seed: int = 0
    # data generation
    M: int = 32
    P: int = 8
    T: int = 4
    video_frames: int = 12
    pairs: int = 64
    motion_amplitude: float = 1.0
    fake_jitter_strength: float = 3.0
    fake_region: list[int] = field(default_factory=lambda: [4, 4, 24, 24])
    direction_bias: str = "both"
    # model
    E: int = 32
    heads: int = 4
    units: int = 3
    spatial_layers_per_unit: int = 3
    temporal_layers_per_unit: int = 1
    pooling: str = "max"
    dica_layers: int = 6
    mlp_ratio: int = 4
    mu_init: float = 0.05
    tau1_init: float = 1.0
    tau2_init: float = 1.0
    k_n: int = 7
    t_diffusion: int = 20
    t_grad: int = 5
    diffusion_path: str = "hybrid"
    dica_bias_enabled: bool = True
    # training
    lr: float = 3e-3
    batch_size: int = 4
    alpha_ema: float = 0.99
    d_sti: float = 1.0
    lambda_h: float = 0.5
    lambda_v: float = 0.5
    weight_decay: float = 0.0
    da_loss_weight: float = 1.0
    steps: int = 1500
    n_clips: int = 2
    checkpoint_every: int = 100
    # verification
    gradcheck_eps: float = 1e-5
    gradcheck_samples: int = 6
    gradcheck_threshold: float = 1e-4
    # inspection
    inspect_video: int = 0
    inspect_clip: int = 0
    # paths
    data_dir: str = ""
    checkpoint_in: str = ""
    checkpoint_out: str = ""
    metrics_out: str = ""

    # ----------------------------------------------------------------- loading

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(raw) - set(known)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        checks = [
            (self.T >= 2, "T: need at least two frames per clip"),
            (self.M > 0 and self.M % self.P == 0, "M: must be a positive multiple of P"),
            (self.E > 0 and self.E % self.heads == 0, "E: must be a positive multiple of heads"),
            (self.units >= 1, "units: need at least one encoder unit"),
            (self.dica_layers >= 1, "dica_layers: need at least one decoder layer"),
            (self.pooling in ("mean", "max"), "pooling: expected 'mean' or 'max'"),
            (
                self.direction_bias in ("horizontal", "vertical", "both"),
                "direction_bias: expected 'horizontal', 'vertical' or 'both'",
            ),
            (
                self.diffusion_path in ("hybrid", "iterative", "spectral"),
                "diffusion_path: expected 'hybrid', 'iterative' or 'spectral'",
            ),
            (self.k_n >= 1 and self.k_n % 2 == 1, "k_n: must be odd and positive"),
            (self.t_diffusion >= 1, "t_diffusion: must be >= 1"),
            (self.t_grad >= 1, "t_grad: must be >= 1"),
            (0.0 < self.alpha_ema < 1.0, "alpha_ema: must lie in (0, 1)"),
            (self.lambda_h >= 0 and self.lambda_v >= 0, "lambda_h/lambda_v: must be >= 0"),
            (self.steps >= 0, "steps: must be >= 0"),
            (self.batch_size >= 2, "batch_size: need at least 2 clips"),
            (self.pairs >= 1, "pairs: need at least one video pair"),
            (self.n_clips >= 1, "n_clips: need at least one clip per video"),
            (self.checkpoint_every >= 1, "checkpoint_every: must be >= 1"),
            (len(self.fake_region) == 4, "fake_region: expected [row0, col0, rows, cols]"),
            (1e-7 <= self.gradcheck_eps <= 1e-3, "gradcheck_eps: must lie in [1e-7, 1e-3]"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        try:
            self.synth().validate()
        except SynthError as exc:
            raise ConfigError(str(exc)) from exc

    # -------------------------------------------------------------- sub-configs

    def synth(self) -> SynthConfig:
        return SynthConfig(
            T=self.T,
            M=self.M,
            P=self.P,
            video_frames=self.video_frames,
            motion_amplitude=self.motion_amplitude,
            fake_jitter_strength=self.fake_jitter_strength,
            fake_region=tuple(self.fake_region),
            direction_bias=self.direction_bias,
            seed=self.seed,
        )

    def ste(self) -> STEConfig:
        return STEConfig(
            T=self.T,
            M=self.M,
            P=self.P,
            E=self.E,
            heads=self.heads,
            units=self.units,
            spatial_layers_per_unit=self.spatial_layers_per_unit,
            temporal_layers_per_unit=self.temporal_layers_per_unit,
            pooling=self.pooling,
        )

    def dica(self) -> DicaConfig:
        return DicaConfig(
            layers=self.dica_layers, heads=self.heads, E=self.E, tau1_init=self.tau1_init
        )

    def model(self) -> ModelConfig:
        return ModelConfig(
            ste=self.ste(),
            dica=self.dica(),
            k_n=self.k_n,
            t_diffusion=self.t_diffusion,
            t_grad=self.t_grad,
            diffusion_path=self.diffusion_path,
            mu_init=self.mu_init,
            tau2_init=self.tau2_init,
            dica_bias_enabled=self.dica_bias_enabled,
            mlp_ratio=self.mlp_ratio,
        )

    def train(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr,
            batch_size=self.batch_size,
            alpha_ema=self.alpha_ema,
            d_sti=self.d_sti,
            lambda_h=self.lambda_h,
            lambda_v=self.lambda_v,
            weight_decay=self.weight_decay,
            da_loss_weight=self.da_loss_weight,
            steps=self.steps,
            n_clips=self.n_clips,
            checkpoint_every=self.checkpoint_every,
            seed=self.seed,
        )
