"""End-to-end gradient verification of the full pipeline."""

from __future__ import annotations

from dataclasses import replace

from . import synth
from .gradcheck import finite_diff_check
from .model import ModelConfig, init_model_params, randomize_for_gradcheck
from .train import TrainConfig, batch_losses, teacher_features


def full_pipeline_gradcheck(
    synth_cfg: synth.SynthConfig,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    eps: float = 1e-5,
    max_per_param: int | None = 6,
    seed: int = 0,
    details: dict | None = None,
) -> float:
    """Max relative error of reverse-mode vs central differences, whole model.

    Builds a fixed triplet batch, moves the student to a conditioned
    point, and differentiates the total training loss along the
    matrix-power diffusion route (the route central differences see).
    Scalar learnables are 1-element tensors, so they are always checked
    exhaustively regardless of `max_per_param`.
    """
    pair = synth.make_dataset(synth_cfg, 1, seed_offset=seed)[0]
    batch = synth.make_triplet(pair, synth_cfg, seed, batch_size=2)
    # mean pooling: the check needs the everywhere-differentiable pooling
    # variant (max pooling is verified separately at the operator level)
    check_cfg = replace(model_cfg.for_gradcheck(), ste=replace(model_cfg.ste, pooling="mean"))
    student = init_model_params(check_cfg, seed)
    randomize_for_gradcheck(student, seed + 1, check_cfg, batch.anchor.frames)
    teacher = student.copy()
    loss_cfg = TrainConfig(
        batch_size=2,
        d_sti=train_cfg.d_sti,
        lambda_h=train_cfg.lambda_h,
        lambda_v=train_cfg.lambda_v,
        da_loss_weight=train_cfg.da_loss_weight,
    )
    # the teacher is frozen during the check: its features are constants
    feats = teacher_features(batch, teacher, check_cfg)

    def loss():
        return batch_losses(batch, student, teacher, check_cfg, loss_cfg, teacher_feats=feats)[0]

    return finite_diff_check(
        loss, student, eps=eps, max_per_param=max_per_param, seed=seed, details=details
    )
