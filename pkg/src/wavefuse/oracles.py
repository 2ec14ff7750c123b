"""Slow reference implementations used to cross-check the fast code paths.

They are deliberately written differently from the production versions:
exhaustive enumeration instead of augmenting paths, and an explicit
precision-recall point list instead of cumulative sums.
"""

from __future__ import annotations

import itertools

from .evalkit.detection import BUCKETS, IOU_THRESHOLDS, MAX_DETS, in_bucket

RECALL_LEVELS = [i / 100 for i in range(101)]


def brute_force_assignment(cost) -> tuple[float, tuple]:
    """Minimum over every injection of columns into rows, first minimum in lexicographic order."""
    n, m = len(cost), len(cost[0]) if len(cost) else 0
    best, arg = None, ()
    for rows in itertools.permutations(range(n), m):
        total = 0.0
        for j in range(m):
            total += float(cost[rows[j]][j])
        if best is None or total < best:
            best, arg = total, rows
    return (0.0 if best is None else best), arg


def _area(box) -> float:
    return float(box[2]) * float(box[3])


def _overlap(a, b) -> float:
    w = min(a[0] + a[2], b[0] + b[2]) - max(a[0], b[0])
    h = min(a[1] + a[3], b[1] + b[3]) - max(a[1], b[1])
    if w <= 0 or h <= 0:
        return 0.0
    inter = w * h
    return inter / (_area(a) + _area(b) - inter)


def _gt_area(g) -> float:
    return _area(g.box) if g.area is None else float(g.area)


def _label_detections(dets, gts, thr, bucket):
    """Per image, walk detections by score and label each one tp / fp / ignore."""
    labelled = []
    images = []
    for x in list(dets) + list(gts):
        if x.image_id not in images:
            images.append(x.image_id)
    for img in sorted(images, key=repr):
        mine = sorted((d for d in dets if d.image_id == img), key=lambda d: -d.score)[:MAX_DETS]
        truth = [g for g in gts if g.image_id == img]
        inside = [g for g in truth if in_bucket(_gt_area(g), bucket)]
        outside = [g for g in truth if not in_bucket(_gt_area(g), bucket)]
        free_in, free_out = list(range(len(inside))), list(range(len(outside)))
        limit = min(thr, 1 - 1e-10)
        for d in mine:
            pick, pick_iou = None, limit
            for k in free_in:
                o = _overlap(d.box, inside[k].box)
                if o >= pick_iou:
                    pick, pick_iou = k, o
            if pick is not None:
                free_in.remove(pick)
                labelled.append((d.score, "tp"))
                continue
            pick, pick_iou = None, limit
            for k in free_out:
                o = _overlap(d.box, outside[k].box)
                if o >= pick_iou:
                    pick, pick_iou = k, o
            if pick is not None:
                free_out.remove(pick)
                labelled.append((d.score, "ignore"))
            elif in_bucket(_area(d.box), bucket):
                labelled.append((d.score, "fp"))
            else:
                labelled.append((d.score, "ignore"))
    n_pos = sum(in_bucket(_gt_area(g), bucket) for g in gts)
    return labelled, n_pos


def brute_force_ap(dets, gts, thr: float, bucket: str = "all"):
    labelled, n_pos = _label_detections(list(dets), list(gts), thr, bucket)
    if n_pos == 0:
        return None
    # stable order: equal scores keep image order, as in the production path
    order = sorted(range(len(labelled)), key=lambda i: -labelled[i][0])
    points, tp, fp = [], 0, 0
    for i in order:
        kind = labelled[i][1]
        if kind == "ignore":
            continue
        tp += kind == "tp"
        fp += kind == "fp"
        points.append((tp / n_pos, tp / (tp + fp)))
    total = 0.0
    for r in RECALL_LEVELS:
        reachable = [p for rec, p in points if rec >= r]
        total += max(reachable) if reachable else 0.0
    return total / len(RECALL_LEVELS)


def brute_force_map(dets, gts) -> dict:
    """``{"ap": {thr: {bucket: v}}, "map": {bucket: v}}`` by exhaustive PR enumeration."""
    ap = {t: {b: brute_force_ap(dets, gts, t, b) for b in BUCKETS} for t in IOU_THRESHOLDS}
    out = {}
    for b in BUCKETS:
        vals = [ap[t][b] for t in IOU_THRESHOLDS]
        out[b] = None if any(v is None for v in vals) else sum(vals) / len(vals)
    return {"ap": ap, "map": out}
