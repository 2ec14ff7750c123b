"""Box conversions and (generalized) IoU, both on arrays and on Tensors."""

from __future__ import annotations

import numpy as np

from .. import nn_core as nn
from ..nn_core import Tensor


def cxcywh_to_xyxy(b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    cx, cy, w, h = np.moveaxis(b, -1, 0)
    return np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=-1)


def xyxy_to_cxcywh(b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    x0, y0, x1, y1 = np.moveaxis(b, -1, 0)
    return np.stack([(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0], axis=-1)


def xywh_to_cxcywh(b, width: float, height: float) -> np.ndarray:
    """Absolute COCO ``[x, y, w, h]`` to normalized centre form."""
    x, y, w, h = np.moveaxis(np.asarray(b, dtype=float), -1, 0)
    return np.stack([(x + w / 2) / width, (y + h / 2) / height, w / width, h / height], axis=-1)


def cxcywh_to_xywh(b, width: float, height: float) -> np.ndarray:
    cx, cy, w, h = np.moveaxis(np.asarray(b, dtype=float), -1, 0)
    return np.stack([(cx - w / 2) * width, (cy - h / 2) * height, w * width, h * height], axis=-1)


def pairwise_giou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """GIoU between every row of ``a [n, 4]`` and ``b [m, 4]`` (corner form)."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    lt = np.maximum(a[:, None, :2], b[None, :, :2])
    rb = np.minimum(a[:, None, 2:], b[None, :, 2:])
    inter = np.prod(np.clip(rb - lt, 0, None), axis=-1)
    union = area_a[:, None] + area_b[None, :] - inter
    hull = np.prod(np.maximum(a[:, None, 2:], b[None, :, 2:]) - np.minimum(a[:, None, :2], b[None, :, :2]), axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, inter / union, 0.0)
        penalty = np.where(hull > 0, (hull - union) / hull, 0.0)
    return iou - penalty


def giou(a, b) -> float:
    """GIoU of two corner-form boxes ``[x0, y0, x1, y1]``."""
    return float(pairwise_giou(a, b)[0, 0])


def giou_rows(pred: Tensor, target: np.ndarray, eps: float = 1e-12) -> Tensor:
    """Differentiable GIoU between matching rows of ``pred`` and ``target`` (both cxcywh)."""
    t = cxcywh_to_xyxy(target).astype(pred.dtype)
    cx, cy, w, h = pred[:, 0], pred[:, 1], pred[:, 2], pred[:, 3]
    x0, y0, x1, y1 = cx - w * 0.5, cy - h * 0.5, cx + w * 0.5, cy + h * 0.5
    tx0, ty0, tx1, ty1 = (nn.as_tensor(t[:, i]) for i in range(4))
    iw = nn.clamp(nn.minimum(x1, tx1) - nn.maximum(x0, tx0), 0.0)
    ih = nn.clamp(nn.minimum(y1, ty1) - nn.maximum(y0, ty0), 0.0)
    inter = iw * ih
    union = w * h + nn.as_tensor((t[:, 2] - t[:, 0]) * (t[:, 3] - t[:, 1])) - inter
    hull = (nn.maximum(x1, tx1) - nn.minimum(x0, tx0)) * (nn.maximum(y1, ty1) - nn.minimum(y0, ty0))
    return inter / (union + eps) - (hull - union) / (hull + eps)
