"""Size-bucketed average precision with COCO matching and 101-point interpolation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SMALL_MAX = 32.0**2
MEDIUM_MAX = 96.0**2
BUCKETS = ("all", "small", "medium", "large")
IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(9))
RECALL_POINTS = np.linspace(0.0, 1.0, 101)
MAX_DETS = 100

_RANGES = {
    "all": (0.0, np.inf),
    "small": (0.0, SMALL_MAX),
    "medium": (SMALL_MAX, MEDIUM_MAX),
    "large": (MEDIUM_MAX, np.inf),
}


def bucket_of(area: float) -> str:
    if area < 0:
        raise ValueError(f"area must be >= 0, got {area}")
    if area < SMALL_MAX:
        return "small"
    return "medium" if area < MEDIUM_MAX else "large"


def in_bucket(area: float, bucket: str) -> bool:
    lo, hi = _RANGES[bucket]
    return lo <= area < hi


@dataclass(frozen=True)
class Detection:
    image_id: object
    box: tuple  # x, y, w, h in pixels
    score: float

    @property
    def area(self) -> float:
        return float(self.box[2] * self.box[3])


@dataclass(frozen=True)
class GroundTruth:
    image_id: object
    box: tuple
    area: float | None = None

    @property
    def gt_area(self) -> float:
        return float(self.box[2] * self.box[3]) if self.area is None else float(self.area)


def iou(a, b) -> float:
    """IoU of two xywh boxes."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    iw = min(ax + aw, bx + bw) - max(ax, bx)
    ih = min(ay + ah, by + bh) - max(ay, by)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return float(inter / (aw * ah + bw * bh - inter))


def iou_matrix(dboxes: np.ndarray, gboxes: np.ndarray) -> np.ndarray:
    d = np.asarray(dboxes, dtype=float).reshape(-1, 4)
    g = np.asarray(gboxes, dtype=float).reshape(-1, 4)
    x1 = np.maximum(d[:, None, 0], g[None, :, 0])
    y1 = np.maximum(d[:, None, 1], g[None, :, 1])
    x2 = np.minimum(d[:, None, 0] + d[:, None, 2], g[None, :, 0] + g[None, :, 2])
    y2 = np.minimum(d[:, None, 1] + d[:, None, 3], g[None, :, 1] + g[None, :, 3])
    inter = np.clip(x2 - x1, 0, None) * np.clip(y2 - y1, 0, None)
    union = (d[:, 2] * d[:, 3])[:, None] + (g[:, 2] * g[:, 3])[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return out


def _group(items):
    out: dict = {}
    for it in items:
        out.setdefault(it.image_id, []).append(it)
    return out


def _match_image(dets, gts, thr, bucket):
    """Per-detection (score, matched, ignored) for one image.

    Ground truths outside the bucket are ignored: detections claiming them are
    dropped, as are unmatched detections whose own area is out of bucket.
    """
    gt_ignore = np.array([not in_bucket(g.gt_area, bucket) for g in gts], dtype=bool)
    order_g = np.argsort(gt_ignore, kind="stable")  # in-bucket ground truths first
    gts = [gts[i] for i in order_g]
    gt_ignore = gt_ignore[order_g]
    dets = sorted(dets, key=lambda d: -d.score)[:MAX_DETS]
    ious = iou_matrix([d.box for d in dets], [g.box for g in gts])
    taken = np.zeros(len(gts), dtype=bool)
    rows = []
    for i, d in enumerate(dets):
        best, m = min(thr, 1 - 1e-10), -1
        for j in range(len(gts)):
            if taken[j]:
                continue
            if m > -1 and not gt_ignore[m] and gt_ignore[j]:
                break
            if ious[i, j] < best:
                continue
            best, m = ious[i, j], j
        if m > -1:
            taken[m] = True
            rows.append((d.score, True, bool(gt_ignore[m])))
        else:
            rows.append((d.score, False, not in_bucket(d.area, bucket)))
    return rows, int(np.sum(~gt_ignore))


def average_precision(dets, gts, iou_thr: float, bucket: str = "all") -> float | None:
    """101-point interpolated AP; ``None`` when the bucket has no ground truth."""
    by_img_d, by_img_g = _group(dets), _group(gts)
    rows, n_pos = [], 0
    for img in sorted(set(by_img_d) | set(by_img_g), key=repr):
        r, n = _match_image(by_img_d.get(img, []), by_img_g.get(img, []), iou_thr, bucket)
        rows.extend(r)
        n_pos += n
    if n_pos == 0:
        return None
    if not rows:
        return 0.0
    scores = np.array([r[0] for r in rows])
    matched = np.array([r[1] for r in rows])
    ignored = np.array([r[2] for r in rows])
    order = np.argsort(-scores, kind="mergesort")
    matched, ignored = matched[order], ignored[order]
    tp = np.cumsum(matched & ~ignored)
    fp = np.cumsum(~matched & ~ignored)
    recall = tp / n_pos
    precision = tp / np.maximum(tp + fp, np.finfo(float).eps)
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    q = np.where(idx < len(precision), precision[np.minimum(idx, len(precision) - 1)], 0.0)
    return float(np.mean(q))


@dataclass
class EvalReport:
    ap: dict = field(default_factory=dict)  # threshold -> bucket -> AP or None
    map: dict = field(default_factory=dict)  # bucket -> mean AP or None
    counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "thresholds": list(IOU_THRESHOLDS),
            "ap": {f"{t:.2f}": v for t, v in self.ap.items()},
            "map": self.map,
            "counts": self.counts,
        }


def map_report(dets, gts, thresholds=IOU_THRESHOLDS) -> EvalReport:
    dets, gts = list(dets), list(gts)
    rep = EvalReport()
    rep.counts = {b: sum(in_bucket(g.gt_area, b) for g in gts) for b in BUCKETS}
    for t in thresholds:
        rep.ap[t] = {b: average_precision(dets, gts, t, b) for b in BUCKETS}
    for b in BUCKETS:
        vals = [rep.ap[t][b] for t in thresholds]
        rep.map[b] = None if any(v is None for v in vals) else float(np.mean(vals))
    return rep
