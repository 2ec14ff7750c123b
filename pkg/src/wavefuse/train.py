"""Detector training loop, inference and evaluation on prepared samples."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import nn_core as nn
from .audio import AudioClip, AudioEncoder, encode_audio
from .detector import Detector, detection_loss
from .detector.boxes import cxcywh_to_xywh, xywh_to_cxcywh
from .evalkit import Detection, EvalReport, GroundTruth, map_report
from .nn_core import ConfigError, NumericError

PIXEL_MEAN, PIXEL_STD = 0.5, 0.25
BACKBONE_LRS = (0.0, 1e-4, 1e-5, 1e-6)


@dataclass
class Sample:
    image_id: object
    image: np.ndarray  # float32 [3, H, W], normalized
    gt_xywh: np.ndarray  # [n, 4] absolute pixels
    frames: np.ndarray | None = None  # audio embedding [T_a, D_a]
    clip: AudioClip | None = None
    tags: frozenset = frozenset()

    @property
    def size(self) -> tuple[int, int]:
        return self.image.shape[2], self.image.shape[1]

    @property
    def gt_cxcywh(self) -> np.ndarray:
        w, h = self.size
        return xywh_to_cxcywh(self.gt_xywh, w, h).reshape(-1, 4)


def normalize_image(rgb_uint8: np.ndarray) -> np.ndarray:
    return ((np.asarray(rgb_uint8, dtype=np.float32).transpose(2, 0, 1) / 255.0 - PIXEL_MEAN) / PIXEL_STD).astype(np.float32)


def attach_embeddings(samples, encoder: AudioEncoder) -> None:
    """Fill ``frames`` from each sample's clip with a frozen encoder."""
    for s in samples:
        if s.clip is None:
            raise ConfigError(f"sample {s.image_id} has no audio clip")
        s.frames = encode_audio(s.clip, encoder).frames.astype(np.float32)


@dataclass
class TrainConfig:
    epochs: int = 60
    lr: float = 2e-4
    backbone_lr: float | None = None  # None: same as lr
    batch: int = 4
    clip_norm: float | None = 0.5
    weight_decay: float = 0.0
    schedule: str = "cosine"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch < 1:
            raise ConfigError("epochs must be >= 0 and batch >= 1")
        if self.lr < 0 or (self.backbone_lr is not None and self.backbone_lr < 0):
            raise ConfigError("learning rates must be >= 0")


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1
    best_state: dict | None = None
    steps: int = 0
    seconds: float = 0.0


def _loss(model: Detector, s: Sample, rng=None):
    out = model(s.image, s.frames if model.fusion is not None else None, rng)
    loss, _ = detection_loss(out, s.gt_cxcywh, model.cfg)
    return loss


def mean_loss(model: Detector, samples) -> float:
    model.eval()
    with nn.no_grad():
        vals = [float(_loss(model, s).data) for s in samples]
    return float(np.mean(vals)) if vals else math.nan


def train_detector(model: Detector, train, val=(), cfg: TrainConfig = TrainConfig(), log=None) -> TrainHistory:
    """Adam over mini-batches with per-epoch validation; keeps the best-validation weights."""
    train, val = list(train), list(val)
    if not train:
        raise ConfigError("empty training set")
    rs = nn.RngState(cfg.seed)
    order_rng = rs.spawn("order").generator
    drop_rng = rs.spawn("dropout").generator
    group_lr = {} if cfg.backbone_lr is None else {"backbone": cfg.backbone_lr}
    opt = nn.Adam(model.parameters(), lr=cfg.lr, group_lr=group_lr, clip_norm=cfg.clip_norm,
                  weight_decay=cfg.weight_decay)
    sched = nn.make_schedule(cfg.schedule, cfg.epochs)
    hist = TrainHistory()
    best = math.inf
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        model.train()
        order = order_rng.permutation(len(train))
        total = 0.0
        for start in range(0, len(order), cfg.batch):
            idx = order[start:start + cfg.batch]
            opt.zero_grad()
            for i in idx:
                loss = _loss(model, train[i], drop_rng)
                value = float(loss.data)
                if not math.isfinite(value):
                    raise NumericError(f"non-finite loss at epoch {epoch}, step {hist.steps}, sample {train[i].image_id}")
                (loss * (1.0 / len(idx))).backward()
                total += value
            opt.step()
            hist.steps += 1
        hist.train_loss.append(total / len(train))
        metric = hist.train_loss[-1]
        if val:
            hist.val_loss.append(mean_loss(model, val))
            metric = hist.val_loss[-1]
        if metric < best:
            best, hist.best_epoch = metric, epoch
            hist.best_state = {k: v.copy() for k, v in model.state_dict().items()}
        if sched is not None:
            opt.scale = sched.step(metric=metric, epoch=epoch)
        if log:
            vl = f" val {hist.val_loss[-1]:.4f}" if val else ""
            log(f"epoch {epoch + 1}/{cfg.epochs}: train {hist.train_loss[-1]:.4f}{vl} ({time.perf_counter() - t0:.0f}s)")
    hist.seconds = time.perf_counter() - t0
    model.eval()
    return hist


def warm_start(model: Detector, rgb_state: dict) -> list[str]:
    """Copy rgb-side weights (everything outside the fusion block) into ``model``."""
    return model.load_state_dict({k: v for k, v in rgb_state.items() if not k.startswith("fusion.")}, strict=False)


def predict(model: Detector, samples) -> list[Detection]:
    model.eval()
    dets = []
    with nn.no_grad():
        for s in samples:
            out = model(s.image, s.frames if model.fusion is not None else None)
            w, h = s.size
            boxes = cxcywh_to_xywh(out.boxes.data.astype(np.float64), w, h)
            for score, box in zip(out.scores.astype(np.float64), boxes):
                dets.append(Detection(s.image_id, tuple(float(v) for v in box), float(score)))
    return dets


def ground_truths(samples) -> list[GroundTruth]:
    return [GroundTruth(s.image_id, tuple(float(v) for v in b)) for s in samples for b in s.gt_xywh]


def evaluate(model: Detector, samples) -> EvalReport:
    return map_report(predict(model, samples), ground_truths(samples))
