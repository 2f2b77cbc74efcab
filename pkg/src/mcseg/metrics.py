"""Confusion matrices and the four segmentation metrics.

All metric arithmetic is exact: integer counts feed ``fractions.Fraction``
and only the final value is converted to float. Conventions (documented
here and surfaced in reports):

* Ground-truth ignore pixels are excluded from the confusion matrix.
* A class that is absent from both ground truth and prediction is dropped
  from mean IU and mean accuracy, with the class count adjusted; dropped
  classes are listed in the report.
* A class with no ground-truth pixels but some predicted mass stays in the
  means and contributes IU 0 and accuracy 0.
* The main-tissues variant computes per-class quantities on the full
  matrix, then averages over non-background classes only; its pixel
  accuracy is restricted to pixels whose ground truth is non-background.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ArgumentError, UndefinedMetricsError
from .volume import LabelMap


@dataclass(frozen=True)
class ConfusionMatrix:
    """counts[i][j] = pixels with ground truth i predicted j."""

    counts: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.counts, dtype=np.int64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
            raise ArgumentError(f"counts must be square, got shape {arr.shape}")
        if (arr < 0).any():
            raise ArgumentError("counts must be non-negative")
        arr.flags.writeable = False
        object.__setattr__(self, "counts", arr)

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def per_class_total(self) -> np.ndarray:
        """s_i: ground-truth pixels of each class."""
        return self.counts.sum(axis=1)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class MetricsReport:
    """Four metrics in [0, 1]; ``None`` marks an undefined value."""

    variant: str
    mean_iu: float | None
    fw_iu: float | None
    pixel_acc: float | None
    mean_acc: float | None
    dropped_classes: tuple[int, ...] = ()


def confusion(gt: LabelMap, pred: LabelMap) -> ConfusionMatrix:
    """Tally (gt, pred) pairs, skipping pixels whose ground truth is ignore."""
    if gt.labels.shape != pred.labels.shape:
        raise ArgumentError(
            f"label dims differ: {gt.labels.shape} vs {pred.labels.shape}"
        )
    if gt.n_classes != pred.n_classes:
        raise ArgumentError(f"class counts differ: {gt.n_classes} vs {pred.n_classes}")
    if (pred.labels == pred.ignore_index).any():
        raise ArgumentError("prediction contains ignore pixels")
    n = gt.n_classes
    keep = gt.labels != gt.ignore_index
    g = gt.labels[keep].astype(np.int64)
    p = pred.labels[keep].astype(np.int64)
    counts = np.bincount(n * g + p, minlength=n * n).reshape(n, n)
    return ConfusionMatrix(counts)


def _per_class(cm: ConfusionMatrix):
    counts = cm.counts
    tp = np.diag(counts)
    s = counts.sum(axis=1)
    predicted = counts.sum(axis=0)
    union = s + predicted - tp
    return tp, s, predicted, union


def compute_metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Evaluate all four metrics over every class (exact arithmetic)."""
    if cm.total == 0:
        raise UndefinedMetricsError("confusion matrix is empty; metrics undefined")
    tp, s, predicted, union = _per_class(cm)
    dropped = tuple(i for i in range(cm.n_classes) if s[i] == 0 and predicted[i] == 0)
    kept = [i for i in range(cm.n_classes) if i not in dropped]

    iu = {i: Fraction(int(tp[i]), int(union[i])) for i in kept}
    acc = {i: Fraction(int(tp[i]), int(s[i])) if s[i] > 0 else Fraction(0) for i in kept}
    total = Fraction(int(s.sum()))
    mean_iu = sum(iu.values(), Fraction(0)) / len(kept)
    mean_acc = sum(acc.values(), Fraction(0)) / len(kept)
    fw_iu = sum((int(s[i]) * iu[i] for i in kept), Fraction(0)) / total
    pixel_acc = Fraction(int(tp.sum())) / total
    return MetricsReport(
        variant="all_classes",
        mean_iu=float(mean_iu),
        fw_iu=float(fw_iu),
        pixel_acc=float(pixel_acc),
        mean_acc=float(mean_acc),
        dropped_classes=dropped,
    )


def main_tissue_metrics(cm: ConfusionMatrix, background: int = 0) -> MetricsReport:
    """Same metrics averaged over non-background classes only.

    Per-class IU and accuracy still count background confusions in their
    denominators; only the averaging and the pixel-accuracy restriction
    change.
    """
    if cm.total == 0:
        raise UndefinedMetricsError("confusion matrix is empty; metrics undefined")
    if not 0 <= background < cm.n_classes:
        raise ArgumentError(f"background {background} out of range")
    tp, s, predicted, union = _per_class(cm)
    dropped = tuple(
        i for i in range(cm.n_classes)
        if i != background and s[i] == 0 and predicted[i] == 0
    )
    kept = [i for i in range(cm.n_classes) if i != background and i not in dropped]

    if kept:
        iu = {i: Fraction(int(tp[i]), int(union[i])) for i in kept}
        acc = {i: Fraction(int(tp[i]), int(s[i])) if s[i] > 0 else Fraction(0) for i in kept}
        mean_iu = float(sum(iu.values(), Fraction(0)) / len(kept))
        mean_acc = float(sum(acc.values(), Fraction(0)) / len(kept))
    else:
        mean_iu = mean_acc = None
    fg_total = int(sum(s[i] for i in range(cm.n_classes) if i != background))
    if fg_total > 0:
        fw_iu = float(
            sum((int(s[i]) * Fraction(int(tp[i]), int(union[i])) for i in kept), Fraction(0))
            / fg_total
        )
        fg_tp = int(sum(tp[i] for i in range(cm.n_classes) if i != background))
        pixel_acc = float(Fraction(fg_tp, fg_total))
    else:
        fw_iu = pixel_acc = None
    return MetricsReport(
        variant="main_tissues",
        mean_iu=mean_iu,
        fw_iu=fw_iu,
        pixel_acc=pixel_acc,
        mean_acc=mean_acc,
        dropped_classes=dropped,
    )


def report_to_dict(report: MetricsReport, cm: ConfusionMatrix) -> dict:
    """JSON-ready dict matching the documented metrics schema."""
    return {
        "variant": report.variant,
        "mean_iu": report.mean_iu,
        "fw_iu": report.fw_iu,
        "pixel_acc": report.pixel_acc,
        "mean_acc": report.mean_acc,
        "confusion": cm.counts.tolist(),
        "dropped_classes": list(report.dropped_classes),
    }


def confusion_csv(cm: ConfusionMatrix) -> str:
    """CSV text: ground-truth rows, prediction columns."""
    buf = io.StringIO()
    n = cm.n_classes
    buf.write("gt\\pred," + ",".join(str(j) for j in range(n)) + "\r\n")
    for i in range(n):
        buf.write(str(i) + "," + ",".join(str(int(v)) for v in cm.counts[i]) + "\r\n")
    return buf.getvalue()
