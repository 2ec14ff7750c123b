"""Binary classification metrics from confusion counts and scores."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

METRIC_NAMES = ("precision", "recall", "f1", "balanced_accuracy", "roc_auc", "pr_auc", "mcc")


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @classmethod
    def from_labels(cls, y_true, y_pred) -> "ConfusionCounts":
        t = np.asarray(y_true).astype(bool)
        p = np.asarray(y_pred).astype(bool)
        if t.shape != p.shape:
            raise ValueError("label arrays differ in shape")
        return cls(int(np.sum(t & p)), int(np.sum(~t & p)), int(np.sum(t & ~p)), int(np.sum(~t & ~p)))


def _ratio(a, b) -> float:
    return a / b if b else 0.0


def mcc(c: ConfusionCounts) -> float:
    factors = (c.tp + c.fp, c.tp + c.fn, c.tn + c.fp, c.tn + c.fn)
    if 0 in factors:
        return 0.0
    return (c.tp * c.tn - c.fp * c.fn) / math.sqrt(math.prod(factors))


def _sweep(y_true, scores):
    """Cumulative (tp, fp) at every distinct score threshold, high to low."""
    y = np.asarray(y_true).astype(bool)
    s = np.asarray(scores, dtype=float)
    order = np.argsort(-s, kind="mergesort")
    y, s = y[order], s[order]
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    return np.cumsum(y)[last], np.cumsum(~y)[last], int(y.sum()), int((~y).sum())


def roc_auc(y_true, scores) -> float:
    tp, fp, npos, nneg = _sweep(y_true, scores)
    if npos == 0 or nneg == 0:
        return float("nan")
    tpr = np.r_[0.0, tp / npos]
    fpr = np.r_[0.0, fp / nneg]
    return float(np.trapezoid(tpr, fpr))


def pr_auc(y_true, scores) -> float:
    """Trapezoidal area under precision-recall, anchored at (recall 0, precision 1)."""
    tp, fp, npos, _ = _sweep(y_true, scores)
    if npos == 0:
        return float("nan")
    recall = np.r_[0.0, tp / npos]
    precision = np.r_[1.0, tp / (tp + fp)]
    return float(np.trapezoid(precision, recall))


def classification_metrics(c: ConfusionCounts, y_true=None, scores=None) -> dict:
    if c.total == 0:
        raise EvaluationError("no samples to evaluate")
    precision = _ratio(c.tp, c.tp + c.fp)
    recall = _ratio(c.tp, c.tp + c.fn)
    specificity = _ratio(c.tn, c.tn + c.fp)
    out = {
        "precision": precision,
        "recall": recall,
        "f1": _ratio(2 * precision * recall, precision + recall),
        "balanced_accuracy": 0.5 * (recall + specificity),
        "mcc": mcc(c),
    }
    if scores is not None:
        if y_true is None or len(y_true) != len(scores):
            raise EvaluationError("scores need matching true labels")
        out["roc_auc"] = roc_auc(y_true, scores)
        out["pr_auc"] = pr_auc(y_true, scores)
    return out
