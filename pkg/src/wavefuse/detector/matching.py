"""Minimum-cost bipartite matching between predictions and ground truths."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..nn_core import NumericError, ShapeError
from .boxes import cxcywh_to_xyxy, pairwise_giou

LAMBDA_CLS, LAMBDA_L1, LAMBDA_GIOU = 2.0, 5.0, 2.0


@dataclass
class MatchResult:
    pairs: list = field(default_factory=list)  # (prediction, ground truth), sorted by prediction
    unmatched: list = field(default_factory=list)

    def total(self, cost: np.ndarray) -> float:
        """Sum of matched costs, accumulated in ground-truth order."""
        s = 0.0
        for i, j in sorted(self.pairs, key=lambda p: p[1]):
            s += float(cost[i, j])
        return s


def _solve(c: np.ndarray):
    """Shortest augmenting paths on ``c [r, n]`` with ``r <= n``.

    Returns ``col_of_row`` plus row and column potentials ``u, v`` with
    ``u[i] + v[j] <= c[i, j]``, equality on the assignment and ``v == 0``
    on unassigned columns.
    """
    r, n = c.shape
    INF = np.inf
    u = np.zeros(r + 1)
    v = np.zeros(n + 1)
    row_of = np.zeros(n + 1, dtype=np.int64)  # 1-based row matched to column j, 0 = free
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, r + 1):
        row_of[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = row_of[j0]
            cur = c[i0 - 1] - u[i0] - v[1:]
            free = ~used[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], INF)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[row_of[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if row_of[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            row_of[j0] = row_of[j1]
            j0 = j1
    col_of_row = np.full(r, -1, dtype=np.int64)
    for j in range(1, n + 1):
        if row_of[j]:
            col_of_row[row_of[j] - 1] = j - 1
    return col_of_row, u[1:], v[1:]


def _optimum(c: np.ndarray) -> tuple[np.ndarray, float]:
    if c.shape[0] == 0:
        return np.zeros(0, dtype=np.int64), 0.0
    cols, _, _ = _solve(c)
    return cols, float(sum(c[k, cols[k]] for k in range(c.shape[0])))


def hungarian(cost) -> MatchResult:
    """Assign every ground truth (column) to a distinct prediction (row) at minimum total cost.

    Among optimal assignments the one whose prediction-per-ground-truth
    vector is lexicographically smallest is returned.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ShapeError(f"cost must be 2-d, got {cost.shape}")
    n, m = cost.shape
    if m > n:
        raise ShapeError(f"need at least as many predictions as ground truths, got {n} < {m}")
    if not np.all(np.isfinite(cost)):
        raise NumericError("cost matrix contains non-finite entries")
    if m == 0:
        return MatchResult([], list(range(n)))

    c = cost.T  # rows = ground truths
    sigma, u, v = _solve(c)
    best = float(sum(c[j, sigma[j]] for j in range(m)))
    tol = 1e-9 * max(1.0, float(np.abs(cost).max()))

    # lexicographic refinement over optimal solutions
    fixed: list[int] = []
    for j in range(m):
        reduced = c[j] - u[j] - v
        used = set(fixed)
        for i in np.flatnonzero(reduced <= tol):
            if i in used:
                continue
            if i == sigma[j]:
                fixed.append(int(i))
                break
            rows = list(range(j + 1, m))
            cols = [k for k in range(n) if k not in used and k != i]
            sub_cols, sub = _optimum(c[np.ix_(rows, cols)]) if rows else (np.zeros(0, np.int64), 0.0)
            head = sum(c[k, fixed[k]] for k in range(j)) + c[j, i]
            if head + sub <= best + tol:
                fixed.append(int(i))
                sigma = np.array(fixed + [cols[k] for k in sub_cols], dtype=np.int64)
                break
    pairs = sorted((int(sigma[j]), j) for j in range(m))
    taken = {p for p, _ in pairs}
    return MatchResult(pairs, [i for i in range(n) if i not in taken])


def match_cost(probs: np.ndarray, boxes: np.ndarray, gt_boxes: np.ndarray,
               lambdas=(LAMBDA_CLS, LAMBDA_L1, LAMBDA_GIOU)) -> np.ndarray:
    """``[N_q, n_gt]`` matching cost from drone probabilities and cxcywh boxes."""
    lc, l1, lg = lambdas
    p = np.asarray(probs, dtype=float)
    p_drone = p[:, 0] if p.ndim == 2 else p
    b = np.asarray(boxes, dtype=float).reshape(-1, 4)
    g = np.asarray(gt_boxes, dtype=float).reshape(-1, 4)
    dist = np.abs(b[:, None, :] - g[None, :, :]).sum(axis=-1)
    gi = pairwise_giou(cxcywh_to_xyxy(b), cxcywh_to_xyxy(g))
    return -lc * p_drone[:, None] + l1 * dist - lg * gi
