"""Confusion-matrix based segmentation metrics."""

from __future__ import annotations

import numpy as np


class ConfusionMatrix:
    """Rows are ground truth, columns are predictions; ignored pixels are not counted."""

    def __init__(self, num_classes: int, ignore_label: int = 255):
        self.num_classes = num_classes
        self.ignore_label = ignore_label
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    @classmethod
    def from_counts(cls, counts) -> "ConfusionMatrix":
        counts = np.asarray(counts, dtype=np.int64)
        cm = cls(counts.shape[0])
        cm.counts = counts.copy()
        return cm

    def update(self, pred, labels) -> None:
        pred, labels = np.asarray(pred).reshape(-1), np.asarray(labels).reshape(-1)
        if pred.shape != labels.shape:
            raise ValueError("prediction and label shapes differ")
        keep = labels != self.ignore_label
        k = self.num_classes
        idx = labels[keep].astype(np.int64) * k + pred[keep].astype(np.int64)
        self.counts += np.bincount(idx, minlength=k * k).reshape(k, k)

    def merge(self, other: "ConfusionMatrix") -> None:
        self.counts += other.counts

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def pixel_accuracy(self) -> float:
        if self.total == 0:
            raise ValueError("all pixels ignored")
        return float(np.trace(self.counts) / self.total)


def miou(cm: ConfusionMatrix) -> tuple[list[float | None], float]:
    """Per-class IoU (None where tp + fp + fn = 0) and their mean over defined classes."""
    if cm.total == 0:
        raise ValueError("all pixels ignored")
    c = cm.counts.astype(np.float64)
    tp = np.diag(c)
    denom = c.sum(axis=0) + c.sum(axis=1) - tp
    per_class = [float(t / d) if d > 0 else None for t, d in zip(tp, denom)]
    defined = [v for v in per_class if v is not None]
    return per_class, float(np.mean(defined))
