"""Command-line entry point: synth | train | eval | gradcheck | inspect.

Exit codes: 0 success, 1 usage/config error, 2 numerical failure.
``DIP_THREADS`` caps worker parallelism for evaluation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import idm, synth, train as train_mod
from .checkpoint import CheckpointError, load_arrays, save_arrays
from .config import ConfigError, RunConfig
from .model import init_model_params
from .params import ParamStore
from .ste import directional_pool, ste_forward, tokenize
from .tensor import NumericsError, no_grad
from .verify import full_pipeline_gradcheck

USAGE_EXIT, NUMERIC_EXIT = 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("DIP_THREADS", "1")))
    except ValueError:
        return 1


def _require_data_dir(cfg: RunConfig) -> Path:
    path = Path(cfg.data_dir)
    if not cfg.data_dir or not (path / "manifest.json").exists():
        raise ConfigError(f"data_dir: no dataset manifest under {cfg.data_dir!r}")
    return path


# ---------------------------------------------------------------- checkpoints


def save_train_state(path, step, student, teacher, optimizer) -> None:
    arrays = {"meta.step": np.array(float(step))}
    for name, t in student.items():
        arrays[f"student.{name}"] = t.data
    for name, t in teacher.items():
        arrays[f"teacher.{name}"] = t.data
    arrays.update(optimizer.state())
    save_arrays(path, arrays)


def load_train_state(path, student: ParamStore, teacher: ParamStore, optimizer) -> int:
    arrays = load_arrays(path)
    student.load_state(
        {n[len("student.") :]: a for n, a in arrays.items() if n.startswith("student.")}
    )
    teacher.load_state(
        {n[len("teacher.") :]: a for n, a in arrays.items() if n.startswith("teacher.")}
    )
    optimizer.load_state({n: a for n, a in arrays.items() if n.startswith("opt.")})
    return int(arrays["meta.step"])


def load_model_params(path, params: ParamStore) -> None:
    """Accept either a bare parameter dump or a full training checkpoint."""
    arrays = load_arrays(path)
    if any(name.startswith("student.") for name in arrays):
        arrays = {n[len("student.") :]: a for n, a in arrays.items() if n.startswith("student.")}
    params.load_state(arrays)


# ---------------------------------------------------------------- subcommands


def cmd_synth(cfg: RunConfig, out: str | None) -> int:
    target = Path(out) if out else Path(cfg.data_dir or "data")
    pairs = synth.make_dataset(cfg.synth(), cfg.pairs)
    synth.write_dataset(target, cfg.synth(), pairs)
    print(json.dumps({"data_dir": str(target), "pairs": len(pairs), "videos": 2 * len(pairs)}))
    return 0


def cmd_train(cfg: RunConfig, out: str | None) -> int:
    data_dir = _require_data_dir(cfg)
    manifest, pairs = synth.read_dataset(data_dir)
    model_cfg = cfg.model()
    train_cfg = cfg.train()
    student = init_model_params(model_cfg, cfg.seed)
    teacher = student.copy()
    optimizer = train_mod.AdamW(
        student, lr=cfg.lr, weight_decay=cfg.weight_decay
    )
    start_step = 0
    if cfg.checkpoint_in:
        start_step = load_train_state(cfg.checkpoint_in, student, teacher, optimizer)

    ckpt_out = out or cfg.checkpoint_out or "model.ckpt"
    metrics_path = Path(cfg.metrics_out) if cfg.metrics_out else None
    metrics_fh = None
    if metrics_path is not None:
        metrics_fh = open(metrics_path, "a" if start_step else "w")

    def on_metrics(step, losses):
        line = losses.as_line(step)
        print(line)
        if metrics_fh is not None:
            metrics_fh.write(line + "\n")
            metrics_fh.flush()

    def on_checkpoint(step):
        save_train_state(ckpt_out, step, student, teacher, optimizer)

    try:
        train_mod.train_loop(
            pairs,
            cfg.synth(),
            model_cfg,
            train_cfg,
            student,
            teacher,
            optimizer,
            start_step=start_step,
            on_metrics=on_metrics,
            on_checkpoint=on_checkpoint,
        )
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
    save_train_state(ckpt_out, train_cfg.steps, student, teacher, optimizer)
    return 0


def cmd_eval(cfg: RunConfig, out: str | None) -> int:
    data_dir = _require_data_dir(cfg)
    _, pairs = synth.read_dataset(data_dir)
    model_cfg = cfg.model()
    params = init_model_params(model_cfg, cfg.seed)
    if cfg.checkpoint_in:
        load_model_params(cfg.checkpoint_in, params)
    report = train_mod.evaluate(
        pairs, params, model_cfg, n_clips=cfg.n_clips, seed=cfg.seed, max_workers=_threads()
    )
    print(report.as_json())
    if out:
        Path(out).write_text(report.as_json() + "\n")
    return 0


def cmd_gradcheck(cfg: RunConfig, out: str | None) -> int:
    details: dict[str, float] = {}
    err = full_pipeline_gradcheck(
        cfg.synth(),
        cfg.model(),
        cfg.train(),
        eps=cfg.gradcheck_eps,
        max_per_param=cfg.gradcheck_samples,
        seed=cfg.seed,
        details=details,
    )
    report = {
        "max_rel_err": err,
        "threshold": cfg.gradcheck_threshold,
        "n_params_checked": len(details),
        "scalars": {k: details[k] for k in ("idm.mu", "dica.tau1", "da.tau2")},
    }
    print(json.dumps(report))
    if out:
        Path(out).write_text(json.dumps(report) + "\n")
    if err > cfg.gradcheck_threshold:
        print(f"gradient check failed: {err} > {cfg.gradcheck_threshold}", file=sys.stderr)
        return NUMERIC_EXIT
    return 0


def cmd_inspect(cfg: RunConfig, out: str | None) -> int:
    data_dir = _require_data_dir(cfg)
    manifest, pairs = synth.read_dataset(data_dir)
    videos: dict[int, np.ndarray] = {}
    for pair in pairs:
        videos[2 * pair.pair_id] = pair.real
        videos[2 * pair.pair_id + 1] = pair.fake
    if cfg.inspect_video not in videos:
        raise ConfigError(f"inspect_video: no video with id {cfg.inspect_video}")
    video = videos[cfg.inspect_video]
    start = min(max(cfg.inspect_clip, 0), video.shape[0] - cfg.T)
    frames = video[start : start + cfg.T]

    model_cfg = cfg.model()
    params = init_model_params(model_cfg, cfg.seed)
    if cfg.checkpoint_in:
        load_model_params(cfg.checkpoint_in, params)

    with no_grad():
        x = tokenize(frames, params, model_cfg.ste)
        z_h, z_v = directional_pool(ste_forward(x, model_cfg.ste, params), model_cfg.ste)
        w = idm.build_score_matrix(z_h, z_v, cfg.k_n, params["idm.mu"])
        p_mat, _ = idm.transition_matrix(w)
    dt, _ = idm.diffusion_distance_spectral(w.data, cfg.t_diffusion)

    target = Path(out) if out else data_dir / "inspect"
    target.mkdir(parents=True, exist_ok=True)
    l = model_cfg.ste.L
    dumps = {
        "W.csv": w.data,
        "P.csv": p_mat.data,
        "Dt.csv": dt,
        "Dt_hh.csv": dt[:l, :l],
        "Dt_hv.csv": dt[:l, l:],
        "Dt_vh.csv": dt[l:, :l],
        "Dt_vv.csv": dt[l:, l:],
    }
    for name, matrix in dumps.items():
        np.savetxt(target / name, matrix, delimiter=",")
    print(json.dumps({"out_dir": str(target), "video": cfg.inspect_video, "clip_start": start}))
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "inspect": cmd_inspect,
}


def build_parser() -> _Parser:
    parser = _Parser(prog="dip", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True, help="path to a JSON run configuration")
        cmd.add_argument("--seed", type=int, default=None, help="override the config seed")
        cmd.add_argument("--out", default=None, help="output path (command-specific)")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = RunConfig.from_file(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
            cfg.validate()
        return COMMANDS[args.command](cfg, args.out)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except (ConfigError, synth.SynthError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except (NumericsError, CheckpointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return NUMERIC_EXIT


if __name__ == "__main__":
    sys.exit(main())
