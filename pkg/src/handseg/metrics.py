"""Segmentation quality metrics over a 3-class pixel confusion matrix.

The five reported quantities are pixel accuracy, mean accuracy, mean IU,
frequency-weighted IU, and the mean IOU restricted to the hand and object
classes. Classes absent from the ground truth are excluded from the means.
"""

from __future__ import annotations

import numpy as np

N_CLASSES = 3
CLASS_NAMES = ("background", "hand", "object")


class ConfusionMatrix:
    """counts[gt][pred] pixel tallies, mergeable across frames."""

    def __init__(self, n_classes: int = N_CLASSES):
        self.n_classes = n_classes
        self.counts = np.zeros((n_classes, n_classes), dtype=np.int64)

    def accumulate(self, pred: np.ndarray, gt: np.ndarray) -> "ConfusionMatrix":
        """Add one prediction/ground-truth pair; order over frames is
        irrelevant because accumulation is a plain sum."""
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
        idx = self.n_classes * gt.astype(np.int64).ravel() + pred.astype(np.int64).ravel()
        self.counts += np.bincount(idx, minlength=self.n_classes ** 2) \
            .reshape(self.n_classes, self.n_classes)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        self.counts += other.counts
        return self

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def _require_nonempty(cm: ConfusionMatrix):
    if cm.total == 0:
        raise ValueError("empty confusion matrix")


def _stats(cm: ConfusionMatrix):
    diag = np.diag(cm.counts).astype(np.float64)
    row = cm.counts.sum(axis=1).astype(np.float64)
    col = cm.counts.sum(axis=0).astype(np.float64)
    present = row > 0
    return diag, row, col, present


def pixel_accuracy(cm: ConfusionMatrix) -> float:
    _require_nonempty(cm)
    return float(np.diag(cm.counts).sum() / cm.total)


def mean_accuracy(cm: ConfusionMatrix) -> float:
    _require_nonempty(cm)
    diag, row, _, present = _stats(cm)
    return float(np.mean(diag[present] / row[present]))


def per_class_iu(cm: ConfusionMatrix) -> dict:
    """IU per class present in the ground truth."""
    _require_nonempty(cm)
    diag, row, col, present = _stats(cm)
    return {c: float(diag[c] / (row[c] + col[c] - diag[c]))
            for c in range(cm.n_classes) if present[c]}


def mean_iu(cm: ConfusionMatrix) -> float:
    iu = per_class_iu(cm)
    return float(np.mean(list(iu.values())))


def fw_iu(cm: ConfusionMatrix) -> float:
    _require_nonempty(cm)
    diag, row, col, present = _stats(cm)
    iu = diag[present] / (row[present] + col[present] - diag[present])
    return float((row[present] * iu).sum() / cm.total)


def hand_object_mean_iou(cm: ConfusionMatrix) -> float:
    """Mean IU over the hand and object classes only; a class missing from
    the ground truth is skipped rather than scored zero."""
    iu = per_class_iu(cm)
    vals = [iu[c] for c in (1, 2) if c in iu]
    if not vals:
        raise ValueError("neither hand nor object present in ground truth")
    return float(np.mean(vals))


def evaluation_report(cm: ConfusionMatrix, n_frames: int) -> str:
    """Plain-text report with all five metrics as percentages (2 decimals)."""
    iu = per_class_iu(cm)
    lines = [
        f"frames evaluated:     {n_frames}",
        f"pixel accuracy:       {100.0 * pixel_accuracy(cm):.2f}",
        f"mean accuracy:        {100.0 * mean_accuracy(cm):.2f}",
        f"mean IU:              {100.0 * mean_iu(cm):.2f}",
        f"f.w. IU:              {100.0 * fw_iu(cm):.2f}",
        f"hand/object mean IOU: {100.0 * hand_object_mean_iou(cm):.2f}",
        "per-class IU:         " + "  ".join(
            f"{CLASS_NAMES[c]}={100.0 * iu[c]:.2f}" if c in iu
            else f"{CLASS_NAMES[c]}=n/a"
            for c in range(cm.n_classes)),
    ]
    return "\n".join(lines)
