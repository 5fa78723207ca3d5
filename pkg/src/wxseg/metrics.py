"""Confusion-matrix accumulation, per-class IoU, and mIoU.

Classes whose union is empty (never in truth nor prediction) are marked
undefined (NaN) and excluded from the mean by default, so a validation
set that happens to miss a class cannot poison model selection. A switch
scores them as zero instead.
"""

from __future__ import annotations

import numpy as np


def new_confusion(n_classes: int) -> np.ndarray:
    """C x C int64 zeros; rows are ground truth, columns predictions."""
    if n_classes < 1:
        raise ValueError("n_classes must be >= 1")
    return np.zeros((n_classes, n_classes), dtype=np.int64)


def accumulate(cm: np.ndarray, preds, truth) -> np.ndarray:
    """Count (truth, pred) pairs into cm in place; associative across
    batches."""
    preds = np.asarray(preds)
    truth = np.asarray(truth)
    if preds.shape != truth.shape:
        raise ValueError(f"length mismatch: preds {preds.shape} vs truth {truth.shape}")
    c = cm.shape[0]
    if preds.size:
        if preds.min() < 0 or preds.max() >= c or truth.min() < 0 or truth.max() >= c:
            raise ValueError(f"class ids must lie in [0, {c})")
        flat = np.bincount(truth.astype(np.int64) * c + preds.astype(np.int64), minlength=c * c)
        cm += flat.reshape(c, c)
    return cm


def iou_per_class(cm: np.ndarray) -> np.ndarray:
    """IoU_c = TP / (TP + FP + FN); NaN where the union is empty."""
    tp = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - np.diag(cm)
    out = np.full(cm.shape[0], np.nan)
    defined = union > 0
    out[defined] = tp[defined] / union[defined]
    return out


def miou(cm: np.ndarray, class_filter=None, undefined_as_zero: bool = False):
    """Mean IoU over the (optionally filtered) defined classes.

    Returns None when no class in the filter is defined, never a silent
    zero.
    """
    iou = iou_per_class(cm)
    if class_filter is not None:
        iou = iou[np.asarray(class_filter, dtype=np.intp)]
    if undefined_as_zero:
        return float(np.where(np.isnan(iou), 0.0, iou).mean()) if iou.size else None
    defined = ~np.isnan(iou)
    if not defined.any():
        return None
    return float(iou[defined].mean())
