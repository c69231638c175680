"""One-pass evaluation: precision (centre error) and success (overlap) curves."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError

CLE_THRESHOLDS = np.arange(51, dtype=np.float64)
IOU_THRESHOLDS = np.linspace(0.0, 1.0, 21)


@dataclass(frozen=True)
class EvalCurves:
    precision: np.ndarray  # fraction of frames with centre error <= threshold, thresholds 0..50 px
    success: np.ndarray    # fraction of frames with IoU >= threshold, thresholds 0..1 step 0.05
    auc: float
    prec_at_20: float


def _as_boxes(boxes) -> np.ndarray:
    arr = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    return arr


def center_errors(pred, gt) -> np.ndarray:
    p, g = _as_boxes(pred), _as_boxes(gt)
    pc = p[:, :2] + p[:, 2:] / 2.0
    gc = g[:, :2] + g[:, 2:] / 2.0
    return np.hypot(*(pc - gc).T)


def overlaps(pred, gt) -> np.ndarray:
    p, g = _as_boxes(pred), _as_boxes(gt)
    left = np.maximum(p[:, 0], g[:, 0])
    top = np.maximum(p[:, 1], g[:, 1])
    right = np.minimum(p[:, 0] + p[:, 2], g[:, 0] + g[:, 2])
    bottom = np.minimum(p[:, 1] + p[:, 3], g[:, 1] + g[:, 3])
    inter = np.maximum(right - left, 0.0) * np.maximum(bottom - top, 0.0)
    union = p[:, 2] * p[:, 3] + g[:, 2] * g[:, 3] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        iou = np.where(union > 0, inter / union, 0.0)
    return np.clip(iou, 0.0, 1.0)


def evaluate(pred_boxes, gt_boxes) -> EvalCurves:
    """Boxes are ``(x, y, w, h)`` with top-left origin."""
    if len(pred_boxes) != len(gt_boxes):
        raise InputError(f"{len(pred_boxes)} predictions for {len(gt_boxes)} ground-truth boxes")
    if len(gt_boxes) == 0:
        raise InputError("cannot evaluate an empty sequence")
    cle = center_errors(pred_boxes, gt_boxes)
    iou = overlaps(pred_boxes, gt_boxes)
    precision = (cle[None, :] <= CLE_THRESHOLDS[:, None]).mean(axis=1)
    success = (iou[None, :] >= IOU_THRESHOLDS[:, None]).mean(axis=1)
    return EvalCurves(precision, success, float(success.mean()), float(precision[20]))
