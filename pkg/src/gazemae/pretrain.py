"""Masked-reconstruction pre-training.

The objective is plain MSE between predicted and ground-truth pixel
values of masked cubes; visible tokens contribute nothing. Optimization
follows the AdamW + linear-warmup + cosine-decay recipe; scale is set
entirely by the config so the same loop runs the full recipe or a
desk-scale smoke test.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from gazemae.data import ClipParams, DatasetManifest, VideoClip, build_clip_index, iter_batches
from gazemae.gaze import accumulate_per_token, render_heatmap
from gazemae.masking import (
    MaskPlan,
    STRATEGIES,
    masking_distribution,
    sample_gaze_mask,
    sample_random_mask,
    sample_tube_mask,
    tokens_to_mask,
)
from gazemae.model import ModelConfig, PretrainModel, load_checkpoint, save_checkpoint, token_pixels

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Raised when the loss goes non-finite; message carries diagnostics."""


@dataclass(frozen=True)
class PretrainConfig:
    rho: float = 0.9
    tau: float = 0.5
    epochs: int = 800
    batch_size: int = 256
    base_lr: float = 1e-3
    final_lr: float = 1e-4
    warmup_epochs: int = 20
    weight_decay: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.95)
    strategy: str = "gaze"
    seed: int = 0
    sigma: float | None = None  # heatmap Gaussian width in px; None = one token width
    grad_clip: float = 5.0
    max_steps: int | None = None  # stop early for smoke runs; schedule still spans epochs

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError("need 0 <= warmup_epochs < epochs")
        if not 0 < self.final_lr <= self.base_lr:
            raise ValueError("need 0 < final_lr <= base_lr")


@dataclass(frozen=True)
class LossReport:
    step: int
    mse: float
    lr: float
    masked_token_count: int


@dataclass(frozen=True)
class PretrainResult:
    checkpoint_path: Path
    reports: list[LossReport]


def lr_at(epoch_fraction: float, cfg) -> float:
    """Learning rate at a fractional epoch: linear 0 -> base_lr over the
    warmup epochs, then cosine base_lr -> final_lr at the last epoch.

    Works for any config exposing warmup_epochs, epochs, base_lr, final_lr.
    """
    if epoch_fraction < cfg.warmup_epochs:
        return cfg.base_lr * epoch_fraction / cfg.warmup_epochs
    progress = (epoch_fraction - cfg.warmup_epochs) / (cfg.epochs - cfg.warmup_epochs)
    return cfg.final_lr + 0.5 * (cfg.base_lr - cfg.final_lr) * (1.0 + math.cos(math.pi * progress))


def masked_mse(pred: torch.Tensor, pixels: torch.Tensor, mask: torch.Tensor,
               geometry: tuple[int, int, int]) -> torch.Tensor:
    """Differentiable mean squared error over masked-cube pixels only.

    pred (B, M, P); pixels (B, T, C, H, W); mask (B, N_r, N_s) bool.
    Targets are gathered in ascending masked-token order, matching the
    decoder's output rows.
    """
    batch = pixels.shape[0]
    flat_mask = mask.reshape(batch, -1)
    tokens = token_pixels(pixels, geometry)
    n_masked = int(flat_mask[0].sum())
    targets = tokens[flat_mask].reshape(batch, n_masked, -1)
    if pred.shape != targets.shape:
        raise ValueError(f"prediction shape {tuple(pred.shape)} != target shape {tuple(targets.shape)}")
    return ((pred - targets) ** 2).mean()


def reconstruction_loss(
    pred: np.ndarray | torch.Tensor,
    target_clip: VideoClip,
    plan: MaskPlan,
    geometry: tuple[int, int, int],
) -> float:
    """Single-clip reconstruction loss; pred rows follow plan's masked order."""
    pred_t = torch.as_tensor(np.asarray(pred), dtype=torch.float64)
    pixels = torch.from_numpy(target_clip.pixels).double()[None]
    mask = torch.from_numpy(plan.mask)[None]
    if pred_t.ndim != 2 or pred_t.shape[0] != int(plan.mask.sum()):
        raise ValueError(
            f"pred has {tuple(pred_t.shape)} rows/cols; plan masks {int(plan.mask.sum())} tokens"
        )
    return float(masked_mse(pred_t[None], pixels, mask, geometry))


def build_mask(
    clip: VideoClip,
    model_cfg: ModelConfig,
    cfg: PretrainConfig,
    seed: int,
) -> MaskPlan:
    """One mask plan for one clip under the configured strategy."""
    n_r, n_s = model_cfg.n_r, model_cfg.n_s
    if cfg.strategy == "random":
        return sample_random_mask(n_r, n_s, cfg.rho, seed)
    if cfg.strategy == "tube":
        return sample_tube_mask(n_r, n_s, cfg.rho, seed)
    _, _, height, width = model_cfg.input_shape
    sigma = cfg.sigma if cfg.sigma is not None else float(model_cfg.token_geometry[2])
    heatmap = render_heatmap(clip.gaze_points, height, width, sigma)
    mass = accumulate_per_token(heatmap, model_cfg.token_geometry)
    return sample_gaze_mask(masking_distribution(mass, cfg.tau), cfg.rho, seed)


def _mask_seed(master_seed: int, step: int, clip_slot: int) -> int:
    return int(np.random.SeedSequence([master_seed, step, clip_slot]).generate_state(1)[0])


def _collate(clips: list[VideoClip]) -> torch.Tensor:
    return torch.from_numpy(np.stack([c.pixels for c in clips])).float()


def pretrain(
    manifest: DatasetManifest,
    cfg: PretrainConfig,
    model_cfg: ModelConfig,
    out_dir: str | Path,
    resume_from: str | Path | None = None,
) -> PretrainResult:
    """Run masked-autoencoder pre-training; returns the final checkpoint path.

    Writes `loss_log.csv` (step,mse,lr,masked_token_count) and epoch-boundary
    checkpoints every max(1, epochs // 10) epochs plus a final one. The loss
    trajectory is deterministic for a fixed seed on one platform, and
    resuming from an epoch checkpoint reproduces the uninterrupted run.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t, _, height, width = model_cfg.input_shape
    params = ClipParams(frames_per_clip=t, height=height, width=width, stride=1)

    index = build_clip_index(manifest, params)
    if not index:
        raise ValueError("training manifest yields no clips")
    steps_per_epoch = len(index) // cfg.batch_size
    if steps_per_epoch == 0:
        raise ValueError(
            f"batch_size {cfg.batch_size} exceeds the {len(index)} available clips"
        )

    torch.manual_seed(cfg.seed)
    model = PretrainModel(model_cfg)
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=cfg.base_lr, weight_decay=cfg.weight_decay, betas=cfg.betas
    )

    start_epoch = 0
    if resume_from is not None:
        payload = load_checkpoint(resume_from)
        model.load_state_dict(payload["model_state"])
        optimizer.load_state_dict(payload["optimizer_state"])
        torch.set_rng_state(payload["rng_state"]["torch"])
        start_epoch = payload["epoch"]
        log.info("resumed pre-training from %s at epoch %d", resume_from, start_epoch)

    k = tokens_to_mask(cfg.rho, model_cfg.n_s)
    masked_per_clip = model_cfg.n_r * k
    ckpt_every = max(1, cfg.epochs // 10)
    log_path = out_dir / "loss_log.csv"
    log_file = open(log_path, "a" if resume_from is not None else "w", newline="")
    logger = csv.writer(log_file)
    if start_epoch == 0:
        logger.writerow(["step", "mse", "lr", "masked_token_count"])

    reports: list[LossReport] = []
    global_step = start_epoch * steps_per_epoch
    final_path = out_dir / "checkpoint_final.pt"
    try:
        for epoch in range(start_epoch, cfg.epochs):
            batches = iter_batches(
                manifest, params, cfg.batch_size,
                shuffle=True, rebalance=False, seed=cfg.seed, epoch=epoch,
            )
            for step_in_epoch, clips in enumerate(batches):
                lr = lr_at(epoch + step_in_epoch / steps_per_epoch, cfg)
                for group in optimizer.param_groups:
                    group["lr"] = lr
                plans = [
                    build_mask(clip, model_cfg, cfg, _mask_seed(cfg.seed, global_step, slot))
                    for slot, clip in enumerate(clips)
                ]
                pixels = _collate(clips)
                mask = torch.from_numpy(np.stack([p.mask for p in plans]))
                pred = model(pixels, mask)
                loss = masked_mse(pred, pixels, mask, model_cfg.token_geometry)
                if not torch.isfinite(loss):
                    raise TrainingDiverged(
                        f"non-finite loss at step {global_step} (lr={lr:.3e}, "
                        f"batch={[(c.video_id, c.start_frame) for c in clips]})"
                    )
                optimizer.zero_grad()
                loss.backward()
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
                optimizer.step()

                report = LossReport(
                    step=global_step,
                    mse=float(loss.detach()),
                    lr=lr,
                    masked_token_count=masked_per_clip * len(clips),
                )
                reports.append(report)
                logger.writerow([report.step, repr(report.mse), repr(report.lr), report.masked_token_count])
                global_step += 1
                if cfg.max_steps is not None and global_step - start_epoch * steps_per_epoch >= cfg.max_steps:
                    save_checkpoint(
                        final_path, model, model_cfg, optimizer, epoch=epoch,
                        extra={"kind": "pretrain", "global_step": global_step,
                               "train_config": dataclasses.asdict(cfg)},
                    )
                    return PretrainResult(final_path, reports)
            if (epoch + 1) % ckpt_every == 0 and epoch + 1 < cfg.epochs:
                save_checkpoint(
                    out_dir / f"checkpoint_epoch{epoch + 1:04d}.pt",
                    model, model_cfg, optimizer, epoch=epoch + 1,
                    extra={"kind": "pretrain", "global_step": global_step,
                           "train_config": dataclasses.asdict(cfg)},
                )
    finally:
        log_file.close()

    save_checkpoint(
        final_path, model, model_cfg, optimizer, epoch=cfg.epochs,
        extra={"kind": "pretrain", "global_step": global_step,
               "train_config": dataclasses.asdict(cfg)},
    )
    return PretrainResult(final_path, reports)
