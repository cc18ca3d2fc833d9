"""Dense-prediction scores."""
from __future__ import annotations

import numpy as np

from ..errors import ValidationError
from ..utils import check_masks


def confusion_matrix(pred, true, K: int) -> np.ndarray:
    """``cm[i, j]`` = pixels with true class ``i`` predicted as ``j``."""
    pred = check_masks(pred, K, "pred")
    true = check_masks(true, K, "true")
    if pred.shape != true.shape:
        raise ValidationError(f"shape mismatch {pred.shape} vs {true.shape}")
    idx = true.reshape(-1).astype(np.int64) * K + pred.reshape(-1)
    return np.bincount(idx, minlength=K * K).reshape(K, K)


def _tp_fp_fn(pred, true, K):
    cm = confusion_matrix(pred, true, K).astype(np.float64)
    tp = np.diag(cm)
    return tp, cm.sum(axis=0) - tp, cm.sum(axis=1) - tp


def per_class_iou(pred, true, K: int) -> np.ndarray:
    """IoU per class; NaN where the class is absent from both masks."""
    tp, fp, fn = _tp_fp_fn(pred, true, K)
    union = tp + fp + fn
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, tp / union, np.nan)


def miou(pred, true, K: int) -> float:
    iou = per_class_iou(pred, true, K)
    if np.all(np.isnan(iou)):
        raise ValidationError("every class is empty in both prediction and truth")
    return float(np.nanmean(iou))


def f1(pred, true, K: int, binary: bool = False) -> float:
    """Macro F1 over non-empty classes, or positive-class F1 when ``binary``.

    Binary F1 with no positives in either mask is 1 (the masks agree).
    """
    tp, fp, fn = _tp_fp_fn(pred, true, K)
    denom = 2 * tp + fp + fn
    if binary:
        if K != 2:
            raise ValidationError("binary F1 needs K == 2")
        return 1.0 if denom[1] == 0 else float(2 * tp[1] / denom[1])
    if np.all(denom == 0):
        raise ValidationError("every class is empty in both prediction and truth")
    valid = denom > 0
    return float(np.mean(2 * tp[valid] / denom[valid]))
