"""Losses, the EMA student/teacher update, the optimizer, and evaluation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import synth
from .dica import PredictionBundle
from .model import ForwardResult, ModelConfig, forward_clip
from .params import ParamStore
from .tensor import NumericsError, Tensor, no_grad

LOG2 = float(np.log(2.0))


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 4
    alpha_ema: float = 0.99
    d_sti: float = 1.0
    lambda_h: float = 0.5
    lambda_v: float = 0.5
    weight_decay: float = 0.0
    da_loss_weight: float = 1.0
    steps: int = 600
    n_clips: int = 2
    checkpoint_every: int = 100
    seed: int = 0

    def validate(self) -> None:
        if not (0.0 < self.alpha_ema < 1.0):
            raise NumericsError("alpha_ema must lie in (0, 1)")
        if min(self.lambda_h, self.lambda_v) < 0:
            raise NumericsError("directional loss weights must be nonnegative")
        if self.batch_size < 2:
            raise NumericsError("classification minibatch needs at least 2 clips")


# ----------------------------------------------------------------------- losses


def _norm_sq(v: Tensor) -> Tensor:
    return (v * v).sum()


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    na, nb = _norm_sq(a), _norm_sq(b)
    if na.data <= 0.0 or nb.data <= 0.0:
        raise NumericsError("cosine similarity of a zero vector")
    return (a * b).sum() / (na * nb).sqrt()


def sti_loss(f_anc: Tensor, f_pos: Tensor, f_neg: Tensor, d_sti: float = 1.0) -> Tensor:
    """Triplet margin on pooled features: positives pulled in, negatives pushed out."""
    margin = d_sti + cosine_similarity(f_anc, f_neg) - cosine_similarity(f_anc, f_pos)
    return margin.relu()


def cosine_matrix(tokens: Tensor) -> Tensor:
    """Pairwise cosine similarities of row vectors.

    Computed as gram / sqrt(outer(diag, diag)): identical rows then get a
    cosine of exactly 1.0 (sqrt(d * d) == d in binary64).
    """
    gram = tokens @ tokens.swapaxes(0, 1)
    n = gram.shape[0]
    diag = gram[np.arange(n), np.arange(n)]
    if np.any(diag.data <= 0.0):
        raise NumericsError("cosine matrix of a zero token")
    denom = (diag.reshape(n, 1) * diag.reshape(1, n)).sqrt()
    return gram / denom


def da_loss(
    z_h_content: Tensor, z_v_content: Tensor, d_hh: Tensor, d_vv: Tensor, tau2: Tensor
) -> Tensor:
    """Match normalized cosine structure to exponentiated diffusion distances."""
    total = None
    for tokens, dist in ((z_h_content, d_hh), (z_v_content, d_vv)):
        cos = cosine_matrix(tokens)
        target = (-(tau2 * dist)).exp()
        diff = (cos + 1.0) / 2.0 - target
        term = (diff * diff).sum()
        total = term if total is None else total + term
    return total


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    """Two-way softmax cross-entropy, computed as logsumexp - logit[label]."""
    shift = Tensor(logits.data.max())  # constant shift: exact logsumexp gradient
    lse = shift + ((logits - shift).exp()).sum().log()
    return lse - logits[label]


def cce_loss(bundle: PredictionBundle, label: int, lambda_h: float, lambda_v: float) -> Tensor:
    loss = cross_entropy(bundle.y, label)
    if lambda_h:
        loss = loss + lambda_h * cross_entropy(bundle.y_h, label)
    if lambda_v:
        loss = loss + lambda_v * cross_entropy(bundle.y_v, label)
    return loss


def total_loss(l_cce: Tensor, l_sti: Tensor, l_da: Tensor, da_weight: float = 1.0) -> Tensor:
    out = l_cce + l_sti
    if da_weight:
        out = out + da_weight * l_da
    return out


# ---------------------------------------------------------------- EMA + optimizer


def ema_update(teacher: ParamStore, student: ParamStore, alpha: float) -> None:
    """teacher <- alpha * teacher + (1 - alpha) * student, in place."""
    t_names, s_names = set(teacher.names()), set(student.names())
    if t_names != s_names:
        raise NumericsError("teacher/student parameter names differ")
    for name, t in teacher.items():
        s = student[name]
        if s.data.shape != t.data.shape:
            raise NumericsError(f"shape mismatch for {name}")
        t.data = alpha * t.data + (1.0 - alpha) * s.data


class AdamW:
    """Adam with decoupled weight decay; state round-trips through checkpoints."""

    def __init__(
        self,
        params: ParamStore,
        lr: float,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}

    def step(self) -> None:
        self.step_count += 1
        b1c = 1.0 - self.beta1**self.step_count
        b2c = 1.0 - self.beta2**self.step_count
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            update = (self.m[name] / b1c) / (np.sqrt(self.v[name] / b2c) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data = p.data - self.lr * update

    def state(self) -> dict[str, np.ndarray]:
        out = {"opt.step": np.array(float(self.step_count))}
        for name in self.params.names():
            out[f"opt.m.{name}"] = self.m[name]
            out[f"opt.v.{name}"] = self.v[name]
        return out

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        self.step_count = int(arrays["opt.step"])
        for name in self.params.names():
            self.m[name] = arrays[f"opt.m.{name}"].copy()
            self.v[name] = arrays[f"opt.v.{name}"].copy()


# -------------------------------------------------------------------- training


@dataclass
class StepLosses:
    l_cce: float
    l_sti: float
    l_da: float
    l_total: float

    def as_line(self, step: int) -> str:
        return json.dumps(
            {
                "step": step,
                "l_cce": self.l_cce,
                "l_sti": self.l_sti,
                "l_da": self.l_da,
                "l_total": self.l_total,
            }
        )


def teacher_features(
    batch: synth.TripletBatch, teacher: ParamStore, model_cfg: ModelConfig
) -> tuple[Tensor, Tensor]:
    """Pooled features of the positive/negative clips; constants for the student."""
    with no_grad():
        f_pos = Tensor(forward_clip(batch.positive.frames, teacher, model_cfg).bundle.f_pool.data)
        f_neg = Tensor(forward_clip(batch.negative.frames, teacher, model_cfg).bundle.f_pool.data)
    return f_pos, f_neg


def batch_losses(
    batch: synth.TripletBatch,
    student: ParamStore,
    teacher: ParamStore,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    teacher_feats: tuple[Tensor, Tensor] | None = None,
) -> tuple[Tensor, StepLosses]:
    """Total loss of one triplet batch through the student (teacher frozen)."""
    f_pos, f_neg = teacher_feats or teacher_features(batch, teacher, model_cfg)

    anchor_result = forward_clip(batch.anchor.frames, student, model_cfg)
    l_sti = sti_loss(anchor_result.bundle.f_pool, f_pos, f_neg, cfg.d_sti)

    tau2 = student["da.tau2"]
    l_cce_sum = None
    l_da_sum = None
    for clip, label in batch.classification:
        if clip is batch.anchor:
            result = anchor_result
        else:
            result = forward_clip(clip.frames, student, model_cfg)
        ce = cce_loss(result.bundle, label, cfg.lambda_h, cfg.lambda_v)
        l_cce_sum = ce if l_cce_sum is None else l_cce_sum + ce
        da = da_loss(
            result.z_h.content,
            result.z_v.content,
            result.diffusion.blocks.hh,
            result.diffusion.blocks.vv,
            tau2,
        )
        l_da_sum = da if l_da_sum is None else l_da_sum + da
    n = float(len(batch.classification))
    l_cce = l_cce_sum * (1.0 / n)
    l_da = l_da_sum * (1.0 / n)
    loss = total_loss(l_cce, l_sti, l_da, cfg.da_loss_weight)
    return loss, StepLosses(
        l_cce=float(l_cce.data),
        l_sti=float(l_sti.data),
        l_da=float(l_da.data),
        l_total=float(loss.data),
    )


def train_step(
    batch: synth.TripletBatch,
    student: ParamStore,
    teacher: ParamStore,
    optimizer: AdamW,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
) -> StepLosses:
    """One optimizer step: student gradients, AdamW update, EMA refresh."""
    loss, losses = batch_losses(batch, student, teacher, model_cfg, cfg)
    if not np.isfinite(losses.l_total):
        raise NumericsError(f"non-finite loss at optimizer step: {losses}")
    student.zero_grads()
    loss.backward()
    optimizer.step()
    ema_update(teacher, student, cfg.alpha_ema)
    return losses


def step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, 3, step])


def train_loop(
    pairs: list[synth.VideoPair],
    synth_cfg: synth.SynthConfig,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    student: ParamStore,
    teacher: ParamStore,
    optimizer: AdamW,
    start_step: int = 0,
    on_metrics=None,
    on_checkpoint=None,
) -> list[StepLosses]:
    """Run optimizer steps start_step..cfg.steps; deterministic in (cfg.seed, step)."""
    cfg.validate()
    history: list[StepLosses] = []
    for step in range(start_step, cfg.steps):
        rng = step_rng(cfg.seed, step)
        pair = pairs[int(rng.integers(len(pairs)))]
        batch = synth.make_triplet(pair, synth_cfg, int(rng.integers(2**31)), cfg.batch_size)
        losses = train_step(batch, student, teacher, optimizer, model_cfg, cfg)
        history.append(losses)
        if on_metrics is not None:
            on_metrics(step + 1, losses)
        if on_checkpoint is not None and (step + 1) % cfg.checkpoint_every == 0:
            on_checkpoint(step + 1)
    return history


# ------------------------------------------------------------------- evaluation


@dataclass
class MetricsReport:
    auc: float
    acc: float
    n_videos: int
    video_scores: list[tuple[int, int, float]] = field(default_factory=list)  # (id, label, score)

    def as_json(self) -> str:
        return json.dumps({"auc": self.auc, "acc": self.acc, "n_videos": self.n_videos})


def auc_rank(labels: np.ndarray, scores: np.ndarray) -> float:
    """Rank-statistic AUC with ties counted as one half."""
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise NumericsError("AUC needs both classes in the evaluation set")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # midrank, 1-based
        i = j + 1
    pos_rank_sum = float(ranks[labels == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def video_score(
    video: np.ndarray,
    params: ParamStore,
    model_cfg: ModelConfig,
    n_clips: int,
    t: int,
    rng,
) -> float:
    """Mean fake-probability over sampled clips."""
    from .model import fake_probability

    clips = synth.sample_clips(video, n_clips, t, rng)
    return float(np.mean([fake_probability(c.frames, params, model_cfg) for c in clips]))


def evaluate(
    pairs: list[synth.VideoPair],
    params: ParamStore,
    model_cfg: ModelConfig,
    n_clips: int,
    seed: int = 0,
    max_workers: int = 1,
) -> MetricsReport:
    """Video-level metrics over real/fake videos of the given pairs."""
    videos = []
    for pair in pairs:
        videos.append((2 * pair.pair_id, synth.REAL, pair.real))
        videos.append((2 * pair.pair_id + 1, synth.FAKE, pair.fake))

    t = model_cfg.ste.T

    def score_one(entry):
        vid, label, frames = entry
        rng = np.random.default_rng([seed, 4, vid])
        return vid, label, video_score(frames, params, model_cfg, n_clips, t, rng)

    if max_workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            scored = list(pool.map(score_one, videos))
    else:
        scored = [score_one(v) for v in videos]

    labels = np.array([label for _, label, _ in scored])
    scores = np.array([score for _, _, score in scored])
    acc = float(((scores >= 0.5).astype(int) == labels).mean())
    return MetricsReport(
        auc=auc_rank(labels, scores),
        acc=acc,
        n_videos=len(scored),
        video_scores=[(int(v), int(l), float(s)) for v, l, s in scored],
    )
