"""On-disk synthetic datasets: PNG frames, WAV segments, COCO annotations, manifest and splits.

Layout under the dataset root::

    dataset.json       generator settings (seed, count, SynthConfig, split spec)
    images/00000.png   one frame per 1 s segment
    audio/00000.wav    the matching stereo 16 kHz segment
    annotations.json   COCO with per-box ``distance_m``
    manifest.jsonl     image_path, wav_path, segment_index, frame_index, tags, ...
    splits.json        image ids per split
    stats.csv          bucket counts and area histogram

Every file is written atomically, and the bytes depend only on the seed
and the configuration.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..audio import encode_wav, decode_wav, make_clip
from ..nn_core import RngState, derive_seed
from ..nn_core.checkpoint import atomic_write
from ..train import Sample, normalize_image
from .coco import AnnotationSet, dataset_stats, read_annotations, write_annotations
from .splits import SplitSpec, make_splits
from .sync import midpoint_frame
from .synth import SceneSpec, SynthConfig, decode_png, sample_tags, synth_scene

OWNED = ("dataset.json", "images", "audio", "annotations.json", "manifest.jsonl", "splits.json", "stats.csv")
SPLITS = ("train", "val", "test")


class DatasetExistsError(FileExistsError):
    pass


def scene_plan(n: int, seed: int, cfg: SynthConfig) -> list[SceneSpec]:
    """Group scenes into videos of ``seconds_per_video`` segments sharing one condition tag set."""
    plan = []
    for i in range(n):
        video, seg = divmod(i, cfg.seconds_per_video)
        tags = sample_tags(RngState(derive_seed(seed, f"video/{video}")).generator)
        plan.append(SceneSpec(i, video, seg, midpoint_frame(seg, cfg.fps), tags))
    return plan


def _spec_dict(spec: SplitSpec) -> dict:
    d = asdict(spec)
    d["test_tags"] = sorted(spec.test_tags)
    return d


def _dumps(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=1) + "\n").encode()


def _prepare(root: Path, force: bool) -> None:
    if root.exists() and any(root.iterdir()):
        if not force:
            raise DatasetExistsError(f"{root} is not empty; pass force=True to overwrite")
        for name in OWNED:
            p = root / name
            if p.is_dir():
                shutil.rmtree(p)
            elif p.exists():
                p.unlink()
    root.mkdir(parents=True, exist_ok=True)


def write_dataset(root, n: int, seed: int, cfg: SynthConfig = SynthConfig(),
                  split: SplitSpec = SplitSpec(), force: bool = False) -> dict:
    """Render ``n`` scenes under ``root`` and return the split id lists."""
    root = Path(root)
    if n < 1:
        raise ValueError(f"dataset needs at least one scene, got n={n}")
    plan = scene_plan(n, seed, cfg)
    # splits depend only on the plan, so a bad spec fails before anything is written
    parts = make_splits([{"image_id": p.index, "tags": p.tags} for p in plan], split)
    ids = {name: sorted(m["image_id"] for m in part) for name, part in zip(SPLITS, parts)}
    _prepare(root, force)
    images, annotations, manifest = [], [], []
    for spec in plan:
        scene = synth_scene(derive_seed(seed, f"scene/{spec.index}"), cfg, tags=spec.tags)
        stem = f"{spec.index:05d}"
        image_path, wav_path = f"images/{stem}.png", f"audio/{stem}.wav"
        atomic_write(root / image_path, scene.png_bytes())
        atomic_write(root / wav_path, encode_wav(scene.waveform))
        tags = sorted(spec.tags)
        images.append({"id": spec.index, "file_name": image_path, "width": cfg.image_size,
                       "height": cfg.image_size, "video": spec.video, "segment_index": spec.segment_index,
                       "frame_index": spec.frame_index, "tags": tags})
        annotations += scene.annotations(spec.index, first_id=len(annotations) + 1)
        manifest.append({"image_id": spec.index, "image_path": image_path, "wav_path": wav_path,
                         "video": spec.video, "segment_index": spec.segment_index,
                         "frame_index": spec.frame_index, "tags": tags,
                         "label": "drone" if scene.has_drone else "background"})

    aset = AnnotationSet(images, annotations)
    atomic_write(root / "annotations.json", write_annotations(aset))
    atomic_write(root / "manifest.jsonl", "".join(json.dumps(m, sort_keys=True) + "\n" for m in manifest).encode())
    atomic_write(root / "splits.json", _dumps(ids))
    atomic_write(root / "stats.csv", dataset_stats(aset).to_csv().encode())
    info = {"n": n, "seed": seed, "synth": asdict(cfg), "split": _spec_dict(split)}
    atomic_write(root / "dataset.json", _dumps(info))
    return ids


@dataclass
class Dataset:
    root: Path
    manifest: list
    annotations: AnnotationSet
    splits: dict

    def entries(self, split: str) -> list[dict]:
        if split not in self.splits:
            raise KeyError(f"unknown split {split!r}; have {sorted(self.splits)}")
        wanted = set(self.splits[split])
        return [m for m in self.manifest if m["image_id"] in wanted]

    def samples(self, split: str) -> list[Sample]:
        """Decoded, normalized samples with clips attached (frames are filled later)."""
        boxes: dict = {}
        for a in self.annotations.annotations:
            boxes.setdefault(a["image_id"], []).append(a["bbox"])
        out = []
        for m in self.entries(split):
            image = decode_png((self.root / m["image_path"]).read_bytes())
            clip = make_clip(decode_wav((self.root / m["wav_path"]).read_bytes()), 0, m["label"],
                             source_id=m["wav_path"])
            gt = np.array(boxes.get(m["image_id"], []), dtype=float).reshape(-1, 4)
            out.append(Sample(m["image_id"], normalize_image(image), gt, clip=clip, tags=frozenset(m["tags"])))
        return out


def load_dataset(root) -> Dataset:
    root = Path(root)
    for name in ("manifest.jsonl", "annotations.json", "splits.json"):
        if not (root / name).is_file():
            raise FileNotFoundError(f"{root} is not a dataset directory (missing {name})")
    manifest = [json.loads(line) for line in (root / "manifest.jsonl").read_text().splitlines() if line.strip()]
    return Dataset(root, manifest, read_annotations((root / "annotations.json").read_bytes()),
                   json.loads((root / "splits.json").read_text()))
