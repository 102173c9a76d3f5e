"""Command-line entrypoint.

Subcommands: pretrain, finetune, eval, gen-synthetic, viz-mask.

Every run resolves its settings as CLI flag > config file > preset
default, writes the resolved key = value echo (including the seed) into
its run directory, and exits 0 on success, 1 on a runtime failure, 2 on
a usage or config error. `pretrain` accepts comma-separated sweep values
for --strategy, --rho and --tau; each combination gets its own run
directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import itertools
import json
import sys
from datetime import datetime
from pathlib import Path

import numpy as np
from PIL import Image

from gazemae.data import (
    PHASES,
    SPLITS,
    DatasetError,
    SyntheticSpec,
    generate_synthetic_dataset,
    load_manifest,
    sample_clip,
)
from gazemae.finetune import FinetuneConfig, evaluate_classifier, finetune, load_encoder_into_classifier
from gazemae.masking import mask_plan_to_rle
from gazemae.model import ModelConfig, PretrainModel, config_from_checkpoint, load_checkpoint
from gazemae.pretrain import PretrainConfig, TrainingDiverged, pretrain
from gazemae.viz import mask_panels


class ConfigError(ValueError):
    """Bad config key or value; maps to exit code 2."""


# --- value coercion: every setting travels as a string and is coerced by key ---

def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _opt(coerce):
    return lambda s: None if s.strip().lower() in ("none", "") else coerce(s)


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(part) for part in s.split(","))


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(part) for part in s.split(","))


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


# key -> (coercer, default); default None without a coercer marker means required
_SPECS: dict[str, dict] = {
    "pretrain": {
        "data": (str, None),
        "out": (str, "runs"),
        "preset": (str, "tiny_test"),
        "strategy": (str, "gaze"),
        "rho": (str, "0.9"),
        "tau": (str, "0.5"),
        "sigma": (_opt(float), None),
        "epochs": (int, 800),
        "batch_size": (int, 256),
        "base_lr": (float, 1e-3),
        "final_lr": (float, 1e-4),
        "warmup_epochs": (int, 20),
        "weight_decay": (float, 1e-4),
        "grad_clip": (float, 5.0),
        "max_steps": (_opt(int), None),
        "seed": (int, 0),
    },
    "finetune": {
        "data": (str, None),
        "out": (str, "runs"),
        "checkpoint": (str, None),
        "epochs": (int, 100),
        "batch_size": (int, 64),
        "base_lr": (float, 5e-4),
        "final_lr": (float, 5e-5),
        "warmup_epochs": (int, 5),
        "rebalance": (_bool, True),
        "weight_decay": (float, 1e-4),
        "grad_clip": (float, 5.0),
        "seed": (int, 0),
    },
    "eval": {
        "data": (str, None),
        "out": (str, "runs"),
        "checkpoint": (str, None),
        "split": (str, "test"),
        "batch_size": (int, 32),
        "seed": (int, 0),
    },
    "gen-synthetic": {
        "out": (str, None),
        "n_train": (int, 14),
        "n_val": (int, 2),
        "n_test": (int, 5),
        "frames_per_video": (int, 40),
        "frame_size": (int, 64),
        "n_classes": (int, 9),
        "pattern_size": (_opt(int), None),
        "gaze_noise_px": (float, 2.0),
        "phase_mix": (_opt(_floats), None),
        "seed": (int, 0),
    },
    "viz-mask": {
        "data": (str, None),
        "out": (str, "runs"),
        "video": (str, None),
        "start": (int, 0),
        "frames": (int, 4),
        "size": (int, 64),
        "patch": (_ints, (2, 8, 8)),
        "rho": (float, 0.9),
        "tau": (float, 0.5),
        "sigma": (_opt(float), None),
        "checkpoint": (_opt(str), None),
        "seed": (int, 0),
    },
}
_REQUIRED = {
    "pretrain": ("data",),
    "finetune": ("data", "checkpoint"),
    "eval": ("data", "checkpoint"),
    "gen-synthetic": ("out",),
    "viz-mask": ("data", "video"),
}


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Parse flat `key = value` lines; '#' starts a comment."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}: line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


def resolve_settings(command: str, args: argparse.Namespace) -> dict:
    """Merge preset defaults, config file, and CLI flags into typed settings."""
    spec = _SPECS[command]
    resolved = {key: default for key, (_, default) in spec.items()}
    raw: dict[str, str] = {}
    if getattr(args, "config", None):
        raw.update(parse_config_file(args.config))
    for key in spec:
        flag_value = getattr(args, key.replace("-", "_"), None)
        if flag_value is not None:
            raw[key] = flag_value
    for key, value in raw.items():
        if key not in spec:
            raise ConfigError(f"unknown config key '{key}' for {command}")
        coerce = spec[key][0]
        try:
            resolved[key] = coerce(value) if isinstance(value, str) else value
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for '{key}': {exc}") from exc
    for key in _REQUIRED[command]:
        if resolved[key] is None:
            raise ConfigError(f"missing required setting '{key}' for {command}")
    return resolved


def write_config_echo(run_dir: Path, settings: dict) -> None:
    lines = [f"{key} = {_fmt(value)}" for key, value in sorted(settings.items())]
    (run_dir / "config.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def make_run_dir(out_root: str | Path, command: str, seed: int) -> Path:
    stamp = datetime.now().strftime("%Y%m%d%H%M%S%f")
    run_dir = Path(out_root) / f"{command}-{stamp}-{seed}"
    run_dir.mkdir(parents=True, exist_ok=False)
    return run_dir


# --- subcommands ---------------------------------------------------------------


def cmd_pretrain(args) -> int:
    settings = resolve_settings("pretrain", args)
    strategies = settings["strategy"].split(",")
    rhos = [float(v) for v in settings["rho"].split(",")]
    taus = [float(v) for v in settings["tau"].split(",")]
    model_cfg = ModelConfig.preset(settings["preset"])
    manifest = load_manifest(settings["data"], "train")
    for strategy, rho, tau in itertools.product(strategies, rhos, taus):
        run = {**settings, "strategy": strategy, "rho": str(rho), "tau": str(tau)}
        try:
            cfg = PretrainConfig(
                rho=rho, tau=tau, strategy=strategy,
                epochs=run["epochs"], batch_size=run["batch_size"],
                base_lr=run["base_lr"], final_lr=run["final_lr"],
                warmup_epochs=run["warmup_epochs"], weight_decay=run["weight_decay"],
                sigma=run["sigma"], grad_clip=run["grad_clip"],
                max_steps=run["max_steps"], seed=run["seed"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        run_dir = make_run_dir(run["out"], "pretrain", cfg.seed)
        write_config_echo(run_dir, run)
        result = pretrain(manifest, cfg, model_cfg, run_dir)
        print(f"pretrain [{strategy} rho={rho} tau={tau}]: "
              f"final checkpoint {result.checkpoint_path}")
    return 0


def cmd_finetune(args) -> int:
    settings = resolve_settings("finetune", args)
    try:
        cfg = FinetuneConfig(
            epochs=settings["epochs"], batch_size=settings["batch_size"],
            base_lr=settings["base_lr"], final_lr=settings["final_lr"],
            warmup_epochs=settings["warmup_epochs"], rebalance=settings["rebalance"],
            weight_decay=settings["weight_decay"], grad_clip=settings["grad_clip"],
            seed=settings["seed"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    train_manifest = load_manifest(settings["data"], "train")
    val_manifest = load_manifest(settings["data"], "val")
    run_dir = make_run_dir(settings["out"], "finetune", cfg.seed)
    write_config_echo(run_dir, settings)
    result = finetune(settings["checkpoint"], train_manifest, val_manifest, cfg, run_dir)
    print(f"finetune: best val Jaccard {result.best_jaccard:.4f}, "
          f"best checkpoint {result.best_checkpoint}")
    return 0


def cmd_eval(args) -> int:
    settings = resolve_settings("eval", args)
    if settings["split"] not in SPLITS:
        raise ConfigError(f"split must be one of {SPLITS}, got {settings['split']!r}")
    payload = load_checkpoint(settings["checkpoint"])
    model, model_cfg = load_encoder_into_classifier(payload)
    manifest = load_manifest(settings["data"], settings["split"])
    cm, scores = evaluate_classifier(model, manifest, model_cfg, settings["batch_size"])
    support = cm.support()
    report = {
        "eval_unit": "per clip over non-overlapping windows; label = clip's last frame",
        "split": settings["split"],
        "n_samples": cm.n_samples,
        "macro": {
            "precision": scores.precision,
            "recall": scores.recall,
            "jaccard": scores.jaccard,
        },
        "per_class": {
            PHASES[k]: {
                "precision": p, "recall": r, "jaccard": j, "support": int(support[k]),
            }
            for k, (p, r, j) in scores.per_class.items()
        },
        "confusion": cm.counts.tolist(),
    }
    run_dir = make_run_dir(settings["out"], "eval", settings["seed"])
    write_config_echo(run_dir, settings)
    text = json.dumps(report, indent=2)
    (run_dir / "eval.json").write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_gen_synthetic(args) -> int:
    settings = resolve_settings("gen-synthetic", args)
    try:
        spec = SyntheticSpec(
            n_train=settings["n_train"], n_val=settings["n_val"], n_test=settings["n_test"],
            frames_per_video=settings["frames_per_video"],
            frame_hw=(settings["frame_size"], settings["frame_size"]),
            n_classes=settings["n_classes"], pattern_size=settings["pattern_size"],
            gaze_noise_px=settings["gaze_noise_px"], phase_mix=settings["phase_mix"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    root = Path(settings["out"])
    root.mkdir(parents=True, exist_ok=True)
    # the echo sits inside the dataset; omitting the path keeps the tree
    # byte-identical for a fixed (spec, seed) wherever it is generated
    write_config_echo(root, {k: v for k, v in settings.items() if k != "out"})
    manifest = generate_synthetic_dataset(spec, root, settings["seed"])
    print(f"gen-synthetic: wrote {spec.n_videos} videos under {root} "
          f"({len(manifest.video_ids)} in train)")
    return 0


def cmd_viz_mask(args) -> int:
    settings = resolve_settings("viz-mask", args)
    manifest = None
    for split in SPLITS:
        candidate = load_manifest(settings["data"], split)
        if settings["video"] in candidate.video_ids:
            manifest = candidate
            break
    if manifest is None:
        raise ConfigError(f"video {settings['video']!r} not found in any split of {settings['data']}")
    size = settings["size"]
    try:
        clip = sample_clip(
            manifest, settings["video"], settings["start"], settings["frames"], (size, size)
        )
    except (ValueError, DatasetError) as exc:
        raise ConfigError(f"invalid clip locator: {exc}") from exc

    geometry = settings["patch"]
    if len(geometry) != 3:
        raise ConfigError(f"patch must be 'T_c,H_c,W_c', got {settings['patch']}")
    sigma = settings["sigma"] if settings["sigma"] is not None else float(geometry[2])

    model = None
    if settings["checkpoint"]:
        payload = load_checkpoint(settings["checkpoint"])
        model = PretrainModel(config_from_checkpoint(payload))
        model.load_state_dict(payload["model_state"])

    frames, random_plan, gaze_plan = mask_panels(
        clip, geometry, settings["rho"], settings["tau"], sigma, settings["seed"], model
    )
    run_dir = make_run_dir(settings["out"], "viz-mask", settings["seed"])
    write_config_echo(run_dir, settings)
    for t, frame in enumerate(frames):
        Image.fromarray(frame).save(run_dir / f"frame_{t:03d}.png")
    (run_dir / "random_mask.rle").write_text(mask_plan_to_rle(random_plan), encoding="utf-8")
    (run_dir / "gaze_mask.rle").write_text(mask_plan_to_rle(gaze_plan), encoding="utf-8")
    print(f"viz-mask: wrote {len(frames)} panel images to {run_dir}")
    return 0


# --- parser --------------------------------------------------------------------

_HELP = {
    "data": "dataset root directory",
    "out": "directory that receives run directories (or the dataset root for gen-synthetic)",
    "preset": "model preset: vit_small or tiny_test",
    "strategy": "masking strategy: gaze, random, or tube (comma-separated to sweep)",
    "rho": "masking ratio in (0, 1] (comma-separated to sweep)",
    "tau": "softmax temperature for gaze masking (comma-separated to sweep)",
    "sigma": "gaze heatmap Gaussian width in px, or 'none' for one token width",
    "epochs": "total training epochs",
    "batch_size": "clips per optimizer step",
    "base_lr": "peak learning rate after warmup",
    "final_lr": "learning rate at the last epoch",
    "warmup_epochs": "linear warmup duration in epochs",
    "weight_decay": "AdamW weight decay",
    "grad_clip": "gradient clipping global norm",
    "max_steps": "stop after this many optimizer steps (smoke runs)",
    "seed": "master RNG seed",
    "checkpoint": "checkpoint file to start from / evaluate / preview with",
    "rebalance": "true/false: inverse-frequency class resampling",
    "split": "dataset split to evaluate",
    "n_train": "number of training videos",
    "n_val": "number of validation videos",
    "n_test": "number of test videos",
    "frames_per_video": "stored frames per synthetic video",
    "frame_size": "square frame size in px",
    "n_classes": "number of phase classes (at most 9)",
    "pattern_size": "class pattern size in px, or 'none' for frame_size // 4",
    "gaze_noise_px": "uniform gaze jitter radius in px",
    "phase_mix": "comma-separated relative phase durations",
    "video": "video id of the clip to visualize",
    "start": "first frame of the clip",
    "frames": "frames per clip",
    "size": "square resize applied before visualization",
    "patch": "token geometry 'T_c,H_c,W_c'",
}

_COMMANDS = {
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "gen-synthetic": cmd_gen_synthetic,
    "viz-mask": cmd_viz_mask,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gazemae",
        description="Gaze-weighted masked autoencoding and surgical phase recognition.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command, func in _COMMANDS.items():
        sub = subparsers.add_parser(command, help=f"run {command}")
        sub.add_argument("--config", help="flat 'key = value' config file")
        for key in _SPECS[command]:
            sub.add_argument(f"--{key.replace('_', '-')}", dest=key, help=_HELP.get(key, ""))
        sub.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DatasetError, TrainingDiverged, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
