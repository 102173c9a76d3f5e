"""Supervised phase-recognition fine-tuning of a pre-trained encoder.

The whole network (encoder + MLP head) trains with cross-entropy under
the same warmup + cosine schedule shape as pre-training. Class imbalance
is handled by inverse-frequency resampling with replacement; the model
kept is the one with the best validation macro-Jaccard.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from gazemae.data import ClipParams, DatasetManifest, build_clip_index, iter_batches
from gazemae.metrics import ConfusionMatrix, MacroScores, macro_scores
from gazemae.model import (
    ModelConfig,
    PhaseClassifier,
    config_from_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from gazemae.pretrain import lr_at

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FinetuneConfig:
    epochs: int = 100
    batch_size: int = 64
    base_lr: float = 5e-4
    final_lr: float = 5e-5
    warmup_epochs: int = 5
    rebalance: bool = True
    seed: int = 0
    weight_decay: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.95)
    grad_clip: float = 5.0

    def __post_init__(self):
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError("need 0 <= warmup_epochs < epochs")


@dataclass(frozen=True)
class FinetuneResult:
    best_checkpoint: Path
    final_checkpoint: Path
    best_jaccard: float
    history: list[dict]


def cross_entropy(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean negative log softmax probability of the true class."""
    n_classes = logits.shape[-1]
    labels = torch.as_tensor(labels)
    if labels.numel() and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must be in [0, {n_classes}), got range "
                         f"[{int(labels.min())}, {int(labels.max())}]")
    return torch.nn.functional.cross_entropy(logits, labels)


def load_encoder_into_classifier(payload: dict) -> tuple[PhaseClassifier, ModelConfig]:
    """Build a classifier whose encoder starts from a checkpoint's weights.

    Accepts pre-training checkpoints (encoder weights under ``encoder.``)
    and classifier checkpoints (full state restore).
    """
    model_cfg = config_from_checkpoint(payload)
    model = PhaseClassifier(model_cfg)
    state = payload["model_state"]
    if payload["extra"].get("kind") == "finetune":
        model.load_state_dict(state)
    else:
        encoder_state = {
            key[len("encoder."):]: value
            for key, value in state.items()
            if key.startswith("encoder.")
        }
        model.encoder.load_state_dict(encoder_state)
    return model, model_cfg


def evaluate_classifier(
    model: PhaseClassifier,
    manifest: DatasetManifest,
    model_cfg: ModelConfig,
    batch_size: int = 32,
) -> tuple[ConfusionMatrix, MacroScores]:
    """Score non-overlapping clip windows; one prediction per clip."""
    t, _, height, width = model_cfg.input_shape
    params = ClipParams.evaluation(t, height, width)
    cm = ConfusionMatrix(model_cfg.n_classes)
    model.eval()
    with torch.no_grad():
        for clips in iter_batches(
            manifest, params, batch_size, shuffle=False, rebalance=False, seed=0
        ):
            pixels = torch.from_numpy(np.stack([c.pixels for c in clips])).float()
            preds = model(pixels).argmax(dim=-1)
            cm.accumulate_many([c.label for c in clips], preds.tolist())
    return cm, macro_scores(cm)


def finetune(
    checkpoint: str | Path,
    train_manifest: DatasetManifest,
    val_manifest: DatasetManifest,
    cfg: FinetuneConfig,
    out_dir: str | Path,
) -> FinetuneResult:
    """Fine-tune a pre-trained encoder for phase recognition.

    Writes `metrics_log.csv` (epoch,train_loss,val_precision,val_recall,
    val_jaccard), a best-validation-Jaccard checkpoint, and a final one.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = load_checkpoint(checkpoint)
    torch.manual_seed(cfg.seed)
    model, model_cfg = load_encoder_into_classifier(payload)

    t, _, height, width = model_cfg.input_shape
    params = ClipParams(frames_per_clip=t, height=height, width=width, stride=1)
    index = build_clip_index(train_manifest, params)
    if not index:
        raise ValueError("training manifest yields no clips")
    steps_per_epoch = len(index) // cfg.batch_size
    if steps_per_epoch == 0:
        raise ValueError(f"batch_size {cfg.batch_size} exceeds the {len(index)} available clips")
    present = {ref.label for ref in index}
    if cfg.rebalance and len(present) < model_cfg.n_classes:
        absent = sorted(set(range(model_cfg.n_classes)) - present)
        log.warning(
            "classes %s absent from the training split; excluded from the rebalanced sampler",
            absent,
        )

    optimizer = torch.optim.AdamW(
        model.parameters(), lr=cfg.base_lr, weight_decay=cfg.weight_decay, betas=cfg.betas
    )

    best_jaccard = -1.0
    best_path = out_dir / "checkpoint_best.pt"
    final_path = out_dir / "checkpoint_final.pt"
    history: list[dict] = []
    with open(out_dir / "metrics_log.csv", "w", newline="") as log_file:
        writer = csv.writer(log_file)
        writer.writerow(["epoch", "train_loss", "val_precision", "val_recall", "val_jaccard"])
        for epoch in range(cfg.epochs):
            model.train()
            losses = []
            batches = iter_batches(
                train_manifest, params, cfg.batch_size,
                shuffle=True, rebalance=cfg.rebalance, seed=cfg.seed, epoch=epoch,
            )
            for step_in_epoch, clips in enumerate(batches):
                lr = lr_at(epoch + step_in_epoch / steps_per_epoch, cfg)
                for group in optimizer.param_groups:
                    group["lr"] = lr
                pixels = torch.from_numpy(np.stack([c.pixels for c in clips])).float()
                labels = torch.tensor([c.label for c in clips])
                loss = cross_entropy(model(pixels), labels)
                optimizer.zero_grad()
                loss.backward()
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
                optimizer.step()
                losses.append(float(loss.detach()))

            _, scores = evaluate_classifier(model, val_manifest, model_cfg, cfg.batch_size)
            row = {
                "epoch": epoch,
                "train_loss": float(np.mean(losses)),
                "val_precision": scores.precision,
                "val_recall": scores.recall,
                "val_jaccard": scores.jaccard,
            }
            history.append(row)
            writer.writerow([row["epoch"], repr(row["train_loss"]), repr(row["val_precision"]),
                             repr(row["val_recall"]), repr(row["val_jaccard"])])
            if scores.jaccard > best_jaccard:
                best_jaccard = scores.jaccard
                save_checkpoint(
                    best_path, model, model_cfg, optimizer, epoch=epoch + 1,
                    extra={"kind": "finetune", "val_jaccard": best_jaccard,
                           "train_config": dataclasses.asdict(cfg)},
                )

    save_checkpoint(
        final_path, model, model_cfg, optimizer, epoch=cfg.epochs,
        extra={"kind": "finetune", "val_jaccard": history[-1]["val_jaccard"],
               "train_config": dataclasses.asdict(cfg)},
    )
    return FinetuneResult(best_path, final_path, best_jaccard, history)
