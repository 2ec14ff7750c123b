"""Audio-to-pyramid alignment and the four fusion layers.

Fusion happens per pyramid level on flattened tokens ``[H*W, d]``. The
linear, MLP and gated layers need audio tokens of the same count, produced
by :func:`align_audio`; cross-attention consumes the raw audio frames.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn_core as nn
from .nn_core import ConfigError, ShapeError, Tensor

FUSION_MODES = ("linear", "mlp", "gated", "xattn")


@dataclass
class FeaturePyramid:
    levels: list  # Tensor [d, H_l, W_l] per level
    strides: tuple = (8, 16, 32, 64)

    def __post_init__(self):
        if len(self.levels) != len(self.strides):
            raise ShapeError(f"{len(self.levels)} levels but {len(self.strides)} strides")
        if any(b <= a for a, b in zip(self.strides, self.strides[1:])):
            raise ShapeError(f"strides must increase strictly: {self.strides}")
        widths = {lv.shape[0] for lv in self.levels}
        if len(widths) != 1:
            raise ShapeError(f"levels disagree on channel width: {sorted(widths)}")

    @property
    def d(self) -> int:
        return self.levels[0].shape[0]

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [tuple(lv.shape[1:]) for lv in self.levels]


@dataclass(frozen=True)
class FusionConfig:
    mode: str = "gated"
    dropout_rate: float = 0.0
    per_level_weights: bool = True
    heads: int = 1
    gate_bias_init: float = 0.0

    def __post_init__(self):
        if self.mode not in FUSION_MODES:
            raise ConfigError(f"unknown fusion mode {self.mode!r}; expected one of {FUSION_MODES}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.heads < 1:
            raise ConfigError(f"heads must be positive, got {self.heads}")


def tokens(level: Tensor) -> Tensor:
    """``[d, H, W]`` to ``[H*W, d]``."""
    d, H, W = level.shape
    return level.reshape(d, H * W).transpose(1, 0)


def untokens(tok: Tensor, H: int, W: int) -> Tensor:
    return tok.transpose(1, 0).reshape(tok.shape[1], H, W)


def align_audio(frames, n_tokens: int, d: int, projection: nn.Linear | None = None) -> Tensor:
    """Map audio frames ``[T_a, D_a]`` onto ``n_tokens`` rows of width ``d``.

    With ``D_a = k*d`` each frame is cut into ``k`` rows; otherwise a learned
    projection ``D_a -> d`` must be supplied. The row sequence is then linearly
    interpolated to ``n_tokens``.
    """
    frames = nn.as_tensor(frames)
    T, D = frames.shape
    if D % d == 0:
        seq = frames.reshape(T * D // d, d)
    elif projection is not None:
        seq = projection(frames)
    else:
        raise ConfigError(f"audio width {D} is not a multiple of {d} and no projection was given")
    return nn.interp_linear_1d(seq, n_tokens)


def _check_pair(rgb: Tensor, audio: Tensor):
    if rgb.shape != audio.shape:
        raise ShapeError(f"rgb tokens {rgb.shape} and audio tokens {audio.shape} differ")


def fuse_linear(rgb, audio, W, b=None, rate: float = 0.0, training: bool = False, rng=None) -> Tensor:
    rgb, audio = nn.as_tensor(rgb), nn.as_tensor(audio)
    _check_pair(rgb, audio)
    return nn.dropout(nn.linear(nn.concat([rgb, audio], axis=-1), W, b), rate, training, rng)


def fuse_mlp(rgb, audio, W, b=None, rate: float = 0.0, training: bool = False, rng=None) -> Tensor:
    h = fuse_linear(rgb, audio, W, b, rate, training, rng)
    return nn.dropout(nn.relu(h), rate, training, rng)


def fuse_gated(rgb, audio, W, b=None, rate: float = 0.0, training: bool = False, rng=None) -> Tensor:
    rgb, audio = nn.as_tensor(rgb), nn.as_tensor(audio)
    _check_pair(rgb, audio)
    logits = nn.dropout(nn.linear(nn.concat([rgb, audio], axis=-1), W, b), rate, training, rng)
    g = nn.sigmoid(logits)
    return g * rgb + (1.0 - g) * audio


def fuse_xattn(rgb, frames, Wq, Wk, Wv, bq=None, bk=None, bv=None, heads: int = 1,
               rate: float = 0.0, training: bool = False, rng=None) -> Tensor:
    """Residual multi-head cross-attention: RGB tokens query the audio frames."""
    rgb, frames = nn.as_tensor(rgb), nn.as_tensor(frames)
    N, d = rgb.shape
    if d % heads:
        raise ConfigError(f"{heads} heads do not divide width {d}")
    T = frames.shape[0]
    dh = d // heads
    q = nn.linear(rgb, Wq, bq).reshape(N, heads, dh).transpose(1, 0, 2)
    k = nn.linear(frames, Wk, bk).reshape(T, heads, dh).transpose(1, 2, 0)
    v = nn.linear(frames, Wv, bv).reshape(T, heads, dh).transpose(1, 0, 2)
    attn = nn.softmax((q @ k) * (1.0 / math.sqrt(dh)))  # [heads, N, T]
    out = (attn @ v).transpose(1, 0, 2).reshape(N, d)
    return rgb + nn.dropout(out, rate, training, rng)


class FusionLayer(nn.Module):
    """One fusion layer's parameters for a single pyramid level (or all, if shared)."""

    def __init__(self, cfg: FusionConfig, d: int, audio_dim: int, rng: np.random.Generator, dtype=np.float32):
        self.mode, self.rate, self.heads = cfg.mode, cfg.dropout_rate, cfg.heads
        if cfg.mode == "xattn":
            if d % cfg.heads:
                raise ConfigError(f"{cfg.heads} heads do not divide width {d}")
            self.q = nn.Linear(d, d, rng, dtype=dtype)
            self.k = nn.Linear(audio_dim, d, rng, dtype=dtype)
            self.v = nn.Linear(audio_dim, d, rng, dtype=dtype)
        else:
            self.proj = nn.Linear(2 * d, d, rng, dtype=dtype)
            if cfg.mode == "gated":
                self.proj.bias.data[:] = cfg.gate_bias_init
            self.align = nn.Linear(audio_dim, d, rng, dtype=dtype) if audio_dim % d else None

    def __call__(self, rgb: Tensor, frames: Tensor, rng=None) -> Tensor:
        if self.mode == "xattn":
            return fuse_xattn(rgb, frames, self.q.weight, self.k.weight, self.v.weight, self.q.bias,
                              self.k.bias, self.v.bias, self.heads, self.rate, self.training, rng)
        audio = align_audio(frames, rgb.shape[0], rgb.shape[1], self.align)
        fn = {"linear": fuse_linear, "mlp": fuse_mlp, "gated": fuse_gated}[self.mode]
        return fn(rgb, audio, self.proj.weight, self.proj.bias, self.rate, self.training, rng)


class PyramidFusion(nn.Module):
    def __init__(self, cfg: FusionConfig, d: int, audio_dim: int, n_levels: int = 4,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        count = n_levels if cfg.per_level_weights else 1
        self.layers = [FusionLayer(cfg, d, audio_dim, rng, dtype) for _ in range(count)]

    def __call__(self, pyramid: FeaturePyramid, frames, rng=None) -> FeaturePyramid:
        return fuse_pyramid(pyramid, frames, self, rng)


def fuse_pyramid(pyramid: FeaturePyramid, frames, fusion: PyramidFusion, rng=None) -> FeaturePyramid:
    """Fuse every level with the audio frames; output shapes match the input."""
    if isinstance(frames, np.ndarray) or not isinstance(frames, Tensor):
        frames = getattr(frames, "frames", frames)
        frames = Tensor(np.asarray(frames, dtype=pyramid.levels[0].dtype))
    out = []
    for l, level in enumerate(pyramid.levels):
        layer = fusion.layers[l if len(fusion.layers) > 1 else 0]
        _, H, W = level.shape
        out.append(untokens(layer(tokens(level), frames, rng), H, W))
    return FeaturePyramid(out, pyramid.strides)
