"""Desk-scale deformable-attention detector with optional audio fusion before the encoder."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import nn_core as nn
from ..fusion import FeaturePyramid, FusionConfig, PyramidFusion, tokens
from ..nn_core import ConfigError, ShapeError, Tensor

STRIDES = (8, 16, 32, 64)


@dataclass(frozen=True)
class DetectorConfig:
    d: int = 64
    levels: int = 4
    encoder_layers: int = 2
    decoder_layers: int = 2
    queries: int = 20
    heads: int = 4
    points: int = 4
    ffn: int = 128
    backbone_widths: tuple = (16, 32, 64, 64, 64, 64)
    lambda_cls: float = 2.0
    lambda_l1: float = 5.0
    lambda_giou: float = 2.0
    no_object_weight: float = 0.1
    aux_loss: bool = True

    def __post_init__(self):
        if self.levels != 4:
            raise ConfigError("the pyramid has exactly 4 levels")
        if self.d % self.heads:
            raise ConfigError(f"{self.heads} heads do not divide d={self.d}")
        if min(self.points, self.queries, self.encoder_layers + 1, self.decoder_layers) < 1:
            raise ConfigError("points, queries and decoder_layers must be >= 1")
        if len(self.backbone_widths) != 6:
            raise ConfigError("backbone_widths lists six stride-2 stages")


# -- backbone -----------------------------------------------------------------------------------


class Backbone(nn.Module):
    """Six stride-2 3x3 convs; the last four stages give strides 8..64, each mapped to width d."""

    def __init__(self, d: int, widths=(16, 32, 64, 64, 64, 64), rng=None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        chans = (3,) + tuple(widths)
        self.convs = [nn.Conv2d(a, b, 3, rng, stride=2, padding=1, dtype=dtype) for a, b in zip(chans[:-1], chans[1:])]
        self.proj = [nn.Linear(c, d, rng, dtype=dtype) for c in widths[2:]]

    def __call__(self, image) -> FeaturePyramid:
        x = image if isinstance(image, Tensor) else Tensor(np.asarray(image, dtype=self.convs[0].weight.dtype))
        if x.ndim != 3 or x.shape[0] != 3:
            raise ShapeError(f"expected a [3, H, W] image, got {x.shape}")
        H, W = x.shape[1:]
        if H % 64 or W % 64:
            raise ShapeError(f"image extents must be multiples of 64, got {H}x{W}")
        levels = []
        for i, conv in enumerate(self.convs):
            x = nn.relu(conv(x))
            if i >= 2:
                c, h, w = x.shape
                tok = self.proj[i - 2](x.reshape(c, h * w).transpose(1, 0))
                levels.append(tok.transpose(1, 0).reshape(-1, h, w))
        return FeaturePyramid(levels, STRIDES)


def sine_position(h: int, w: int, d: int, temperature: float = 10000.0) -> np.ndarray:
    """2-D sinusoidal encoding ``[h*w, d]``: first half encodes y, second half x."""
    half = d // 2
    dim_t = temperature ** (2 * (np.arange(half) // 2) / half)
    ys = (np.arange(h) + 0.5) / h * 2 * np.pi
    xs = (np.arange(w) + 0.5) / w * 2 * np.pi
    py = ys[:, None] / dim_t
    px = xs[:, None] / dim_t
    py = np.where(np.arange(half) % 2 == 0, np.sin(py), np.cos(py))
    px = np.where(np.arange(half) % 2 == 0, np.sin(px), np.cos(px))
    return np.concatenate([np.repeat(py, w, axis=0), np.tile(px, (h, 1))], axis=1)


def token_reference_points(shapes) -> np.ndarray:
    """Normalized cell centres of all flattened tokens, ``[S, 2]`` as (x, y)."""
    pts = []
    for h, w in shapes:
        yy, xx = np.meshgrid((np.arange(h) + 0.5) / h, (np.arange(w) + 0.5) / w, indexing="ij")
        pts.append(np.stack([xx.ravel(), yy.ravel()], axis=1))
    return np.concatenate(pts)


# -- attention ----------------------------------------------------------------------------------


class DeformableAttention(nn.Module):
    """Multi-scale deformable attention with M heads, L levels and K points per level."""

    def __init__(self, d: int, levels: int = 4, heads: int = 4, points: int = 4, rng=None, dtype=np.float32):
        if d % heads:
            raise ConfigError(f"{heads} heads do not divide d={d}")
        if points < 1:
            raise ConfigError("need at least one sampling point")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.d, self.L, self.M, self.K = d, levels, heads, points
        self.offsets = nn.Linear(d, heads * levels * points * 2, rng, dtype=dtype)
        self.weights = nn.Linear(d, heads * levels * points, rng, dtype=dtype)
        self.value = nn.Linear(d, d, rng, dtype=dtype)
        self.out = nn.Linear(d, d, rng, dtype=dtype)
        # start from a ring of sampling directions, one per head, growing with k
        self.offsets.weight.data[:] = 0
        theta = np.arange(heads) * 2 * np.pi / heads
        grid = np.stack([np.cos(theta), np.sin(theta)], -1)
        grid = grid / np.abs(grid).max(-1, keepdims=True)
        grid = np.tile(grid[:, None, None, :], (1, levels, points, 1)) * np.arange(1, points + 1)[None, None, :, None]
        self.offsets.bias.data[:] = grid.reshape(-1).astype(dtype)
        self.weights.weight.data[:] = 0
        self.weights.bias.data[:] = 0
        self.last_weights: np.ndarray | None = None

    def __call__(self, query: Tensor, ref, values: Tensor, shapes) -> Tensor:
        """``query [N, d]``, ``ref [N, 2]`` normalized (x, y), ``values [S, d]`` flattened levels."""
        N, S = query.shape[0], values.shape[0]
        M, L, K, dh = self.M, self.L, self.K, self.d // self.M
        if len(shapes) != L or sum(h * w for h, w in shapes) != S:
            raise ShapeError(f"level shapes {shapes} do not describe {S} value tokens")
        v = self.value(values).reshape(S, M, dh).transpose(1, 0, 2)  # [M, S, dh]
        norm = np.array([[w, h] for h, w in shapes], dtype=query.dtype)  # offsets are in level pixels
        off = self.offsets(query).reshape(N, M, L, K, 2) * (1.0 / norm)[None, None, :, None, :]
        ref = nn.as_tensor(ref)
        loc = off + ref.reshape(N, 1, 1, 1, 2)
        loc = loc.transpose(1, 2, 0, 3, 4).reshape(M, L, N * K, 2)
        sampled = nn.multiscale_sample(v, shapes, loc)  # [M, L, N*K, dh]
        sampled = sampled.reshape(M, L, N, K, dh).transpose(2, 0, 1, 3, 4).reshape(N, M, L * K, dh)
        attn = nn.softmax(self.weights(query).reshape(N, M, L * K))
        self.last_weights = attn.data
        out = (attn.reshape(N, M, 1, L * K) @ sampled).reshape(N, self.d)
        return self.out(out)


class MultiHeadAttention(nn.Module):
    def __init__(self, d: int, heads: int, rng, dtype=np.float32):
        self.h = heads
        self.q = nn.Linear(d, d, rng, dtype=dtype)
        self.k = nn.Linear(d, d, rng, dtype=dtype)
        self.v = nn.Linear(d, d, rng, dtype=dtype)
        self.o = nn.Linear(d, d, rng, dtype=dtype)

    def __call__(self, q_in: Tensor, k_in: Tensor, v_in: Tensor) -> Tensor:
        N, d = q_in.shape
        T, h = k_in.shape[0], self.h
        dh = d // h
        q = self.q(q_in).reshape(N, h, dh).transpose(1, 0, 2)
        k = self.k(k_in).reshape(T, h, dh).transpose(1, 2, 0)
        v = self.v(v_in).reshape(T, h, dh).transpose(1, 0, 2)
        a = nn.softmax((q @ k) * (1.0 / math.sqrt(dh)))
        return self.o((a @ v).transpose(1, 0, 2).reshape(N, d))


class FeedForward(nn.Module):
    def __init__(self, d: int, hidden: int, rng, dtype=np.float32):
        self.fc1 = nn.Linear(d, hidden, rng, dtype=dtype)
        self.fc2 = nn.Linear(hidden, d, rng, dtype=dtype)

    def __call__(self, x):
        return self.fc2(nn.relu(self.fc1(x)))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: DetectorConfig, rng, dtype=np.float32):
        self.attn = DeformableAttention(cfg.d, cfg.levels, cfg.heads, cfg.points, rng, dtype)
        self.norm1 = nn.LayerNorm(cfg.d, dtype=dtype)
        self.ffn = FeedForward(cfg.d, cfg.ffn, rng, dtype)
        self.norm2 = nn.LayerNorm(cfg.d, dtype=dtype)

    def __call__(self, x, pos, ref, shapes):
        x = self.norm1(x + self.attn(x + pos, ref, x, shapes))
        return self.norm2(x + self.ffn(x))


class DecoderLayer(nn.Module):
    def __init__(self, cfg: DetectorConfig, rng, dtype=np.float32):
        self.self_attn = MultiHeadAttention(cfg.d, cfg.heads, rng, dtype)
        self.norm1 = nn.LayerNorm(cfg.d, dtype=dtype)
        self.cross = DeformableAttention(cfg.d, cfg.levels, cfg.heads, cfg.points, rng, dtype)
        self.norm2 = nn.LayerNorm(cfg.d, dtype=dtype)
        self.ffn = FeedForward(cfg.d, cfg.ffn, rng, dtype)
        self.norm3 = nn.LayerNorm(cfg.d, dtype=dtype)

    def __call__(self, tgt, qpos, ref, memory, shapes):
        q = tgt + qpos
        tgt = self.norm1(tgt + self.self_attn(q, q, tgt))
        tgt = self.norm2(tgt + self.cross(tgt + qpos, ref, memory, shapes))
        return self.norm3(tgt + self.ffn(tgt))


# -- detector -------------------------------------------------------------------------------------


@dataclass
class DetectionOutput:
    probs: Tensor  # [N_q, 2] over (drone, no-object)
    boxes: Tensor  # [N_q, 4] cxcywh in (0, 1)
    logits: Tensor
    aux: list = field(default_factory=list)  # (logits, boxes) of earlier decoder layers

    @property
    def scores(self) -> np.ndarray:
        return self.probs.data[:, 0]


class Detector(nn.Module):
    """Backbone, optional audio fusion, deformable encoder and decoder, class and box heads."""

    def __init__(self, cfg: DetectorConfig = DetectorConfig(), fusion: FusionConfig | None = None,
                 audio_dim: int = 128, seed: int = 0, dtype=np.float32):
        rs = nn.RngState(seed)
        self.cfg, self.fusion_cfg, self.dtype = cfg, fusion, dtype
        self.backbone = Backbone(cfg.d, cfg.backbone_widths, rs.spawn("backbone").generator, dtype).set_group("backbone")
        self.level_embed = nn.Parameter(rs.spawn("level").generator.normal(0, 1, (cfg.levels, cfg.d)), "head", dtype)
        rng = rs.spawn("transformer").generator
        self.encoder = [EncoderLayer(cfg, rng, dtype) for _ in range(cfg.encoder_layers)]
        self.decoder = [DecoderLayer(cfg, rng, dtype) for _ in range(cfg.decoder_layers)]
        q_rng = rs.spawn("queries").generator
        self.query_pos = nn.Parameter(q_rng.normal(0, 1, (cfg.queries, cfg.d)), "head", dtype)
        self.query_tgt = nn.Parameter(q_rng.normal(0, 1, (cfg.queries, cfg.d)), "head", dtype)
        self.ref_point = nn.Linear(cfg.d, 2, q_rng, dtype=dtype)
        h_rng = rs.spawn("heads").generator
        self.class_head = nn.Linear(cfg.d, 2, h_rng, dtype=dtype)
        self.box_head = nn.MLP([cfg.d, cfg.d, cfg.d, 4], h_rng, dtype=dtype)
        self.box_head.layers[-1].weight.data[:] = 0
        self.box_head.layers[-1].bias.data[:] = 0
        self.box_head.layers[-1].bias.data[2:] = -2.0  # start with boxes ~12% of the image
        self.fusion = (PyramidFusion(fusion, cfg.d, audio_dim, cfg.levels, rs.spawn("fusion").generator, dtype)
                       if fusion is not None else None)
        self._pos_cache: dict = {}

    def _positions(self, shapes):
        key = tuple(shapes)
        if key not in self._pos_cache:
            pos = [sine_position(h, w, self.cfg.d) for h, w in shapes]
            self._pos_cache[key] = (np.concatenate(pos).astype(self.dtype), token_reference_points(shapes).astype(self.dtype))
        return self._pos_cache[key]

    def features(self, image, audio=None, rng=None) -> FeaturePyramid:
        pyr = self.backbone(image)
        if self.fusion is not None:
            if audio is None:
                raise ConfigError("this detector fuses audio; pass the clip's embedding frames")
            pyr = self.fusion(pyr, audio, rng)
        return pyr

    def _head(self, h, ref_logit):
        logits = self.class_head(h)
        raw = self.box_head(h)
        boxes = nn.sigmoid(raw + nn.concat([ref_logit, Tensor(np.zeros((ref_logit.shape[0], 2), self.dtype))], axis=1))
        return logits, boxes

    def __call__(self, image, audio=None, rng=None) -> DetectionOutput:
        pyr = self.features(image, audio, rng)
        shapes = pyr.shapes
        pos_np, ref_np = self._positions(shapes)
        lvl = np.concatenate([np.full(h * w, l) for l, (h, w) in enumerate(shapes)])
        pos = Tensor(pos_np) + self.level_embed[lvl]
        mem = nn.concat([tokens(level) for level in pyr.levels], axis=0)
        for layer in self.encoder:
            mem = layer(mem, pos, ref_np, shapes)
        ref_logit = self.ref_point(self.query_pos)
        ref = nn.sigmoid(ref_logit)
        tgt = self.query_tgt
        outs = []
        for layer in self.decoder:
            tgt = layer(tgt, self.query_pos, ref, mem, shapes)
            outs.append(tgt)
        heads = [self._head(h, ref_logit) for h in (outs if self.cfg.aux_loss else outs[-1:])]
        logits, boxes = heads[-1]
        return DetectionOutput(nn.softmax(logits), boxes, logits, heads[:-1])

    def rgb_state(self) -> dict:
        """Parameters shared with an rgb-only detector (everything but fusion)."""
        return {k: v for k, v in self.state_dict().items() if not k.startswith("fusion.")}
