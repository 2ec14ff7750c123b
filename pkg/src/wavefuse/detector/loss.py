"""Set-prediction loss over matched and unmatched queries."""

from __future__ import annotations

import numpy as np

from .. import nn_core as nn
from ..nn_core import Tensor
from .boxes import giou_rows
from .matching import MatchResult, hungarian, match_cost

DRONE, NO_OBJECT = 0, 1


def set_loss(logits: Tensor, boxes: Tensor, gt_boxes: np.ndarray, match: MatchResult,
             lambda_l1: float = 5.0, lambda_giou: float = 2.0, no_object_weight: float = 0.1) -> Tensor:
    """Mean over queries of the per-query loss.

    Matched queries pay cross-entropy toward "drone" plus weighted L1 and
    ``1 - GIoU`` box terms; the rest pay down-weighted cross-entropy toward
    "no object".
    """
    nq = logits.shape[0]
    lp = nn.log_softmax(logits)
    target = np.full(nq, NO_OBJECT)
    weight = np.full(nq, no_object_weight, dtype=logits.dtype)
    for i, _ in match.pairs:
        target[i] = DRONE
        weight[i] = 1.0
    total = -(lp[np.arange(nq), target] * weight).sum()
    if match.pairs:
        qi = np.array([i for i, _ in match.pairs])
        gi = np.array([j for _, j in match.pairs])
        gt = np.asarray(gt_boxes, dtype=logits.dtype).reshape(-1, 4)[gi]
        pb = boxes[qi]
        total = total + lambda_l1 * nn.tabs(pb - gt).sum()
        total = total + lambda_giou * (1.0 - giou_rows(pb, gt)).sum()
    return total * (1.0 / nq)


def detection_loss(out, gt_boxes: np.ndarray, cfg) -> tuple[Tensor, list[MatchResult]]:
    """Match and score the final and auxiliary predictions of one image."""
    gt_boxes = np.asarray(gt_boxes, dtype=float).reshape(-1, 4)
    lambdas = (cfg.lambda_cls, cfg.lambda_l1, cfg.lambda_giou)
    total, matches = None, []
    for logits, boxes in [*out.aux, (out.logits, out.boxes)]:
        probs = np.exp(logits.data - logits.data.max(1, keepdims=True))
        probs /= probs.sum(1, keepdims=True)
        m = hungarian(match_cost(probs, boxes.data, gt_boxes, lambdas))
        loss = set_loss(logits, boxes, gt_boxes, m, cfg.lambda_l1, cfg.lambda_giou, cfg.no_object_weight)
        total = loss if total is None else total + loss
        matches.append(m)
    return total, matches
