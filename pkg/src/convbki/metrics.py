"""Segmentation metrics over predicted and true labels."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .grid import DirichletVoxelGrid


@dataclass
class EvalReport:
    """Per-class scores plus a confusion matrix indexed ``[predicted, true]``.

    Classes absent from both predictions and truth have NaN IoU and are left
    out of the mean.
    """

    iou: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    miou: float
    confusion: np.ndarray
    accuracy: float
    num_points: int
    fps: Optional[float] = None
    class_names: list = field(default_factory=list)

    @property
    def confusion_normalized(self) -> np.ndarray:
        """Rows (predictions) scaled to sum to 1; all-zero rows stay zero."""
        rows = self.confusion.sum(axis=1, keepdims=True)
        return np.divide(self.confusion, rows, out=np.zeros(self.confusion.shape),
                         where=rows > 0)

    def to_rows(self):
        names = self.class_names or [str(c) for c in range(len(self.iou))]
        for c, name in enumerate(names):
            yield {"class": name, "iou": self.iou[c], "precision": self.precision[c],
                   "recall": self.recall[c]}

    def summary(self) -> dict:
        return {"miou": self.miou, "accuracy": self.accuracy, "num_points": self.num_points,
                "fps": self.fps}


def confusion_matrix(pred, truth, num_classes: int) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    return np.bincount(pred * num_classes + truth,
                       minlength=num_classes ** 2).reshape(num_classes, num_classes)


def evaluate(pred, truth, num_classes: int, fps: Optional[float] = None,
             class_names=()) -> EvalReport:
    """IoU, precision and recall. Points predicted as -1 (unmapped) are skipped."""
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise ValueError("prediction and truth lengths differ")
    if truth.size and (truth.min() < 0 or truth.max() >= num_classes):
        raise ValueError("truth label out of range")
    keep = pred >= 0
    pred, truth = pred[keep], truth[keep]
    cm = confusion_matrix(pred, truth, num_classes)
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=1) - tp
    fn = cm.sum(axis=0) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = tp / (tp + fp + fn)
        precision = tp / (tp + fp)
        recall = tp / (tp + fn)
    miou = float(np.nanmean(iou)) if np.any(np.isfinite(iou)) else float("nan")
    acc = float(tp.sum() / len(pred)) if len(pred) else float("nan")
    return EvalReport(iou, precision, recall, miou, cm, acc, int(len(pred)), fps, list(class_names))


def bev_project(grid: DirichletVoxelGrid) -> np.ndarray:
    """Top-down label image: the most likely class of the highest observed voxel.

    Columns with no observed voxel are -1 and should be excluded from scoring.
    """
    observed = grid.observed()
    Z = observed.shape[2]
    has = observed.any(axis=2)
    top = Z - 1 - np.argmax(observed[:, :, ::-1], axis=2)
    X, Y = np.indices(has.shape)
    labels = np.argmax(grid.alpha[:, X, Y, top], axis=0)
    return np.where(has, labels, -1)
