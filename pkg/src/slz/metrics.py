"""Evaluation arithmetic: confusion matrices, per-class/mean IOU, binary
safe/unsafe collapse, and the false positive rate.

Mean IOU averages over classes whose union is non-empty; classes with an empty
union are reported as undefined and excluded from the mean (the report header
documents this). FPR with no unsafe truth pixels returns 0.0 with an
undefined-denominator flag instead of NaN so descent-curve averages stay
finite.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

if TYPE_CHECKING:
    from .data import ClassScheme


def _check_pair(pred: np.ndarray, truth: np.ndarray) -> None:
    if pred.shape != truth.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {truth.shape}")


def confusion(pred: np.ndarray, truth: np.ndarray, num_classes: int) -> np.ndarray:
    """K x K count matrix; entry (i, j) counts pixels with truth i predicted j."""
    _check_pair(pred, truth)
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    for name, m in (("pred", pred), ("truth", truth)):
        if m.size and (m.min() < 0 or m.max() >= num_classes):
            raise ValueError(f"{name} mask holds values outside [0,{num_classes})")
    flat = truth.astype(np.int64).ravel() * num_classes + pred.astype(np.int64).ravel()
    counts = np.bincount(flat, minlength=num_classes * num_classes)
    return counts.reshape(num_classes, num_classes)


@dataclass(frozen=True)
class IouResult:
    per_class: tuple[float, ...]   # NaN where the union is empty
    defined: tuple[bool, ...]
    mean: float


def iou(cm: np.ndarray) -> IouResult:
    """Per-class Jaccard from a confusion matrix, plus the unweighted mean
    over defined classes."""
    k = cm.shape[0]
    if cm.shape != (k, k) or k < 2:
        raise ValueError(f"confusion matrix must be KxK with K >= 2, got {cm.shape}")
    inter = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - inter
    defined = union > 0
    per_class = np.full(k, math.nan)
    per_class[defined] = inter[defined] / union[defined]
    mean = float(per_class[defined].mean()) if defined.any() else math.nan
    return IouResult(tuple(per_class.tolist()), tuple(bool(d) for d in defined), mean)


def to_binary(mask: np.ndarray, scheme: "ClassScheme") -> np.ndarray:
    """Collapse a scheme-class mask to a boolean safe/unsafe mask."""
    mask = np.asarray(mask)
    k = len(scheme.output_classes)
    if mask.size and (mask.min() < 0 or mask.max() >= k):
        raise ValueError(f"mask holds values outside [0,{k}) for scheme '{scheme.name}'")
    lut = np.zeros(k, dtype=bool)
    lut[list(scheme.safe_ids)] = True
    return lut[mask]


def binary_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Jaccard index of the safe pixel sets; two all-unsafe masks count as
    identical (1.0)."""
    _check_pair(a, b)
    a = a.astype(bool)
    b = b.astype(bool)
    union = int((a | b).sum())
    if union == 0:
        return 1.0
    return int((a & b).sum()) / union


@dataclass(frozen=True)
class FprResult:
    value: float
    undefined: bool = False   # truth had no unsafe pixels


def fpr(pred_safe: np.ndarray, truth_safe: np.ndarray) -> FprResult:
    """False positive rate FP/(FP+TN): the share of truly unsafe pixels that
    were called safe."""
    _check_pair(pred_safe, truth_safe)
    pred_safe = pred_safe.astype(bool)
    truth_safe = truth_safe.astype(bool)
    truth_unsafe = ~truth_safe
    fp = int((truth_unsafe & pred_safe).sum())
    tn = int((truth_unsafe & ~pred_safe).sum())
    if fp + tn == 0:
        return FprResult(0.0, undefined=True)
    return FprResult(fp / (fp + tn))


# ---------------------------------------------------------------------------
# metric report rows
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FrameMetrics:
    frame_index: int
    altitude_m: float
    iou_result: IouResult
    fpr_result: FprResult

    def flags(self, class_names: Sequence[str]) -> str:
        parts = [f"iou_undefined:{class_names[i]}"
                 for i, d in enumerate(self.iou_result.defined) if not d]
        if self.fpr_result.undefined:
            parts.append("fpr_undefined")
        return ";".join(parts)


def write_metrics_csv(path, rows: Sequence[FrameMetrics],
                      class_names: Sequence[str]) -> None:
    """CSV of per-frame metrics. mean_iou averages over classes with non-empty
    union, per evaluation frame."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame_index", "altitude_m", "mean_iou",
                         *[f"iou_{n}" for n in class_names], "fpr", "flags"])
        for r in rows:
            per_class = ["" if math.isnan(v) else f"{v:.6f}"
                         for v in r.iou_result.per_class]
            mean = "" if math.isnan(r.iou_result.mean) else f"{r.iou_result.mean:.6f}"
            writer.writerow([r.frame_index, f"{r.altitude_m:.6f}", mean,
                             *per_class, f"{r.fpr_result.value:.6f}",
                             r.flags(class_names)])
