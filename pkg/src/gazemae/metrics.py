"""Confusion-matrix accumulation and macro-averaged precision/recall/Jaccard.

Macro scores average over classes that actually occur in the ground
truth; classes a split never contains are excluded rather than scored 0.
A present class that was never predicted scores precision 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ConfusionMatrix:
    """K x K count matrix; rows index the true class, columns the predicted."""

    n_classes: int
    counts: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros((self.n_classes, self.n_classes), dtype=np.int64)
        else:
            self.counts = np.asarray(self.counts, dtype=np.int64)
            if self.counts.shape != (self.n_classes, self.n_classes):
                raise ValueError(
                    f"counts shape {self.counts.shape} != ({self.n_classes}, {self.n_classes})"
                )

    def accumulate(self, y_true: int, y_pred: int) -> "ConfusionMatrix":
        if not (0 <= y_true < self.n_classes and 0 <= y_pred < self.n_classes):
            raise ValueError(
                f"labels must be in [0, {self.n_classes}), got true={y_true} pred={y_pred}"
            )
        self.counts[y_true, y_pred] += 1
        return self

    def accumulate_many(self, y_true, y_pred) -> "ConfusionMatrix":
        for t, p in zip(y_true, y_pred, strict=True):
            self.accumulate(int(t), int(p))
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        """Elementwise sum, for combining parallel evaluation shards."""
        if other.n_classes != self.n_classes:
            raise ValueError("cannot merge confusion matrices of different sizes")
        return ConfusionMatrix(self.n_classes, self.counts + other.counts)

    @property
    def n_samples(self) -> int:
        return int(self.counts.sum())

    def support(self) -> np.ndarray:
        return self.counts.sum(axis=1)


@dataclass(frozen=True)
class MacroScores:
    precision: float
    recall: float
    jaccard: float
    per_class: dict[int, tuple[float, float, float]]


def macro_scores(cm: ConfusionMatrix) -> MacroScores:
    """Unweighted mean of per-class precision, recall, and Jaccard.

    Per class k: P = TP/(TP+FP), R = TP/(TP+FN), J = TP/(TP+FP+FN).
    Only classes with nonzero ground-truth support contribute.
    """
    if cm.n_samples == 0:
        raise ValueError("cannot score an empty confusion matrix")
    per_class: dict[int, tuple[float, float, float]] = {}
    for k in range(cm.n_classes):
        tp = int(cm.counts[k, k])
        fn = int(cm.counts[k].sum()) - tp
        fp = int(cm.counts[:, k].sum()) - tp
        if tp + fn == 0:  # class absent from ground truth
            continue
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn)
        jaccard = tp / (tp + fp + fn)
        per_class[k] = (precision, recall, jaccard)
    means = np.mean([list(v) for v in per_class.values()], axis=0)
    return MacroScores(
        precision=float(means[0]),
        recall=float(means[1]),
        jaccard=float(means[2]),
        per_class=per_class,
    )
