"""COCO-style annotation files carrying a per-object ``distance_m`` field."""

from __future__ import annotations

import copy
import csv
import io
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from ..evalkit import BUCKETS, bucket_of

CATEGORIES = [{"id": 1, "name": "drone"}]


class AnnotationFormatError(ValueError):
    pass


class AnnotationWarning(UserWarning):
    pass


@dataclass
class AnnotationSet:
    """Thin wrapper over the three COCO arrays; unknown keys ride along untouched."""

    images: list[dict] = field(default_factory=list)
    annotations: list[dict] = field(default_factory=list)
    categories: list[dict] = field(default_factory=lambda: copy.deepcopy(CATEGORIES))
    extra: dict = field(default_factory=dict)

    def for_image(self, image_id) -> list[dict]:
        return [a for a in self.annotations if a["image_id"] == image_id]

    def image_size(self, image_id) -> tuple[int, int]:
        for im in self.images:
            if im["id"] == image_id:
                return im["width"], im["height"]
        raise KeyError(image_id)


_REQUIRED = {
    "images": ("id", "width", "height"),
    "annotations": ("id", "image_id", "category_id", "bbox"),
    "categories": ("id", "name"),
}


def read_annotations(blob: bytes | str) -> AnnotationSet:
    try:
        doc = json.loads(blob)
    except json.JSONDecodeError as exc:
        raise AnnotationFormatError(f"malformed annotation JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise AnnotationFormatError("annotation document must be a JSON object")
    for key, fields in _REQUIRED.items():
        if key not in doc:
            raise AnnotationFormatError(f"missing required key {key!r}")
        for i, item in enumerate(doc[key]):
            for f in fields:
                if f not in item:
                    raise AnnotationFormatError(f"missing required key {f!r} in {key}[{i}]")
    extra = {k: v for k, v in doc.items() if k not in _REQUIRED}
    aset = AnnotationSet(doc["images"], doc["annotations"], doc["categories"], extra)
    for msg in validate(aset):
        warnings.warn(msg, AnnotationWarning, stacklevel=2)
    return aset


def write_annotations(aset: AnnotationSet) -> bytes:
    doc = dict(aset.extra)
    doc.update(images=aset.images, annotations=aset.annotations, categories=aset.categories)
    return json.dumps(doc, sort_keys=True, indent=1).encode()


def validate(aset: AnnotationSet) -> list[str]:
    """Consistency problems: stored area vs w*h and boxes leaving the image."""
    sizes = {im["id"]: (im["width"], im["height"]) for im in aset.images}
    problems = []
    for a in aset.annotations:
        x, y, w, h = a["bbox"]
        if "area" in a and abs(a["area"] - w * h) > 0.5:
            problems.append(f"annotation {a['id']}: area {a['area']} differs from w*h = {w * h}")
        if a["image_id"] in sizes:
            W, H = sizes[a["image_id"]]
            if x < 0 or y < 0 or x + w > W or y + h > H:
                problems.append(f"annotation {a['id']}: box {a['bbox']} leaves the {W}x{H} image")
        else:
            problems.append(f"annotation {a['id']}: unknown image id {a['image_id']}")
    return problems


def make_annotation(ann_id: int, image_id, bbox, distance_m: float | None = None, **extra) -> dict:
    x, y, w, h = (float(v) for v in bbox)
    ann = {"id": ann_id, "image_id": image_id, "category_id": 1, "bbox": [x, y, w, h], "area": w * h,
           "iscrowd": 0}
    if distance_m is not None:
        ann["distance_m"] = float(distance_m)
    ann.update(extra)
    return ann


@dataclass
class DatasetStats:
    counts: dict
    bin_edges: np.ndarray
    histogram: np.ndarray

    @property
    def total(self) -> int:
        return int(sum(self.counts[b] for b in ("small", "medium", "large")))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["kind", "key", "value"])
        for b in ("small", "medium", "large", "all"):
            w.writerow(["bucket", b, self.counts[b]])
        for lo, hi, n in zip(self.bin_edges[:-1], self.bin_edges[1:], self.histogram):
            w.writerow(["area_bin", f"{lo:.6g}-{hi:.6g}", int(n)])
        return buf.getvalue()


def dataset_stats(aset: AnnotationSet, n_bins: int = 20, max_area: float = 1e6) -> DatasetStats:
    """Bucket counts plus a log-spaced histogram of ground-truth areas."""
    areas = np.array([a.get("area", a["bbox"][2] * a["bbox"][3]) for a in aset.annotations], dtype=float)
    counts = {b: 0 for b in BUCKETS}
    for area in areas:
        counts[bucket_of(area)] += 1
    counts["all"] = len(areas)
    edges = np.logspace(0, np.log10(max_area), n_bins + 1)
    hist, _ = np.histogram(np.clip(areas, 1, max_area), bins=edges)
    return DatasetStats(counts, edges, hist)
