"""Waveform I/O, clip preparation, the strided-conv audio encoder and spectra.

A clip is one second of 16 kHz audio with both channels laid end to end
(32,000 values) and standardized to zero mean and unit variance. The encoder
is a stack of strided 1-D convolutions with ReLU; with the default layer
plan it turns a clip into 99 frames of 128 features.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field

import numpy as np

from . import nn_core as nn
from .nn_core import ConfigError, ShapeError, Tensor

SAMPLE_RATE = 16_000
CLIP_LEN = 2 * SAMPLE_RATE
LABELS = ("drone", "background")


class FormatError(ValueError):
    """Unsupported or malformed audio container."""


class StateError(RuntimeError):
    """An operation needs weights that have not been provided."""


@dataclass
class Waveform:
    samples: np.ndarray  # [channels, n] in [-1, 1]
    sample_rate: int

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        if self.sample_rate <= 0:
            raise FormatError(f"sample rate must be positive, got {self.sample_rate}")
        if self.samples.shape[0] not in (1, 2):
            raise FormatError(f"1 or 2 channels supported, got {self.samples.shape[0]}")

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate


@dataclass
class AudioClip:
    values: np.ndarray
    label: str | None = None
    source_id: str = ""
    segment_index: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape != (CLIP_LEN,):
            raise ShapeError(f"clip must hold exactly {CLIP_LEN} values, got {self.values.shape}")
        if self.label is not None and self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")


@dataclass
class AudioEmbedding:
    frames: np.ndarray  # [T_a, D_a]
    frame_rate: float = 0.0  # frames per second of audio; a clip spans one second


@dataclass
class Spectrum:
    freqs: np.ndarray
    mean_amplitude: np.ndarray
    n_samples: int

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["freq_hz", "mean_amplitude"])
        for f, a in zip(self.freqs, self.mean_amplitude):
            w.writerow([f"{f:.6g}", f"{a:.9e}"])
        return buf.getvalue()


# -- WAV container ---------------------------------------------------------------------


def decode_wav(blob: bytes) -> Waveform:
    """Parse a RIFF/WAVE file holding 16-bit PCM with one or two channels."""
    if len(blob) < 12 or blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise FormatError(f"not a RIFF/WAVE container (chunk id {blob[:4]!r})")
    off = 12
    fmt = None
    data = None
    while off + 8 <= len(blob):
        cid, size = struct.unpack_from("<4sI", blob, off)
        body = blob[off + 8 : off + 8 + size]
        if cid == b"fmt ":
            if size < 16:
                raise FormatError(f"truncated {cid!r} chunk")
            tag, ch, rate, _, _, bits = struct.unpack_from("<HHIIHH", body)
            if tag != 1 or bits != 16:
                raise FormatError(f"chunk {cid!r}: only PCM-16 supported (format tag {tag}, {bits} bits)")
            if ch not in (1, 2):
                raise FormatError(f"chunk {cid!r}: {ch} channels unsupported")
            fmt = (ch, rate)
        elif cid == b"data":
            data = body
        off += 8 + size + (size & 1)
    if fmt is None:
        raise FormatError("missing chunk b'fmt '")
    if data is None:
        raise FormatError("missing chunk b'data'")
    ch, rate = fmt
    ints = np.frombuffer(data[: len(data) // (2 * ch) * 2 * ch], dtype="<i2").reshape(-1, ch).T
    return Waveform(ints.astype(np.float64) / 32768.0, rate)


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")


def encode_wav(w: Waveform) -> bytes:
    ints = to_pcm16(w.samples)
    payload = np.ascontiguousarray(ints.T).tobytes()
    ch, rate = w.channels, int(w.sample_rate)
    fmt = struct.pack("<HHIIHH", 1, ch, rate, rate * ch * 2, ch * 2, 16)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(payload)) + payload
    return b"RIFF" + struct.pack("<I", len(body)) + body


# -- preprocessing -------------------------------------------------------------------------


def resample(w: Waveform, target_rate: int = SAMPLE_RATE) -> Waveform:
    """Linear-interpolation resampler (no anti-alias filter)."""
    if target_rate <= 0:
        raise ConfigError(f"target rate must be positive, got {target_rate}")
    if w.n_samples == 0:
        raise FormatError("cannot resample an empty waveform")
    if w.sample_rate == target_rate:
        return Waveform(w.samples.copy(), target_rate)
    n_out = int(round(w.n_samples * target_rate / w.sample_rate))
    src_t = np.arange(w.n_samples) / w.sample_rate
    dst_t = np.arange(n_out) / target_rate
    out = np.stack([np.interp(dst_t, src_t, ch) for ch in w.samples])
    return Waveform(out, target_rate)


def standardize(x: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean()
    var = x.var()
    if var <= eps:
        return np.zeros_like(x)
    return (x - mu) / np.sqrt(var)


def make_clip(w: Waveform, segment_index: int = 0, label: str | None = None, source_id: str = "") -> AudioClip:
    """Cut second ``segment_index`` out of a 16 kHz waveform into a standardized clip.

    The last, short segment is zero-padded; mono input fills both halves.
    """
    if w.sample_rate != SAMPLE_RATE:
        raise ConfigError(f"make_clip expects {SAMPLE_RATE} Hz input, got {w.sample_rate}; resample first")
    lo = segment_index * SAMPLE_RATE
    seg = w.samples[:, lo : lo + SAMPLE_RATE]
    if seg.shape[1] < SAMPLE_RATE:
        seg = np.pad(seg, ((0, 0), (0, SAMPLE_RATE - seg.shape[1])))
    if seg.shape[0] == 1:
        seg = np.concatenate([seg, seg])
    return AudioClip(standardize(seg.reshape(-1)), label, source_id, segment_index)


def n_segments(w: Waveform) -> int:
    return int(np.ceil(w.n_samples / w.sample_rate))


# -- encoder ------------------------------------------------------------------------------------


@dataclass(frozen=True)
class EncoderConfig:
    kernels: tuple = (10, 3, 3, 3, 3, 2, 2)
    strides: tuple = (5, 2, 2, 2, 2, 2, 2)
    hidden: int = 32
    dim: int = 128

    def __post_init__(self):
        if len(self.kernels) != len(self.strides) or not self.kernels:
            raise ConfigError("encoder kernels and strides must be non-empty and equal length")

    def frames(self, n: int = CLIP_LEN) -> int:
        return encoder_frames(n, self.kernels, self.strides)


def encoder_frames(n: int, kernels, strides) -> int:
    for k, s in zip(kernels, strides):
        n = nn.conv_out_len(n, k, s)
        if n <= 0:
            raise ShapeError(f"encoder receptive field exceeds the input (kernel {k}, stride {s})")
    return n


class AudioEncoder(nn.Module):
    """Strided 1-D conv feature encoder: ``[32000] -> [T_a, D_a]``."""

    def __init__(self, cfg: EncoderConfig = EncoderConfig(), rng: np.random.Generator | None = None,
                 dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        widths = [1] + [cfg.hidden] * (len(cfg.kernels) - 1) + [cfg.dim]
        self.convs = [
            nn.Conv1d(a, b, k, rng, stride=s, dtype=dtype)
            for a, b, k, s in zip(widths[:-1], widths[1:], cfg.kernels, cfg.strides)
        ]

    def __call__(self, clip) -> Tensor:
        x = clip.values if isinstance(clip, AudioClip) else clip
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.convs[0].weight.dtype))
        if x.ndim == 1:
            x = x.reshape(1, -1)
        self.cfg.frames(x.shape[-1])
        for conv in self.convs:
            x = nn.relu(conv(x))
        return x.transpose(1, 0)


def encode_audio(clip: AudioClip, encoder: AudioEncoder) -> AudioEmbedding:
    with nn.no_grad():
        frames = encoder(clip).data
    return AudioEmbedding(frames, frame_rate=float(frames.shape[0]))


# -- classifier ------------------------------------------------------------------------------------


class AudioClassifier(nn.Module):
    """Encoder, mean-pool over frames, linear head, softmax over (drone, background)."""

    def __init__(self, cfg: EncoderConfig = EncoderConfig(), rng: np.random.Generator | None = None,
                 dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.encoder = AudioEncoder(cfg, rng, dtype)
        self.head = nn.Linear(cfg.dim, 2, rng, dtype=dtype)

    def logits(self, clip) -> Tensor:
        return self.head(self.encoder(clip).mean(axis=0))

    def __call__(self, clip) -> Tensor:
        return nn.softmax(self.logits(clip))


def classify_clip(emb: AudioEmbedding | np.ndarray, head: nn.Linear | None) -> np.ndarray:
    """``(p_drone, p_background)`` for an encoded clip."""
    if head is None:
        raise StateError("classifier head weights are missing")
    frames = emb.frames if isinstance(emb, AudioEmbedding) else np.asarray(emb)
    pooled = Tensor(frames.astype(np.float64).mean(axis=0))
    W = Tensor(head.weight.data.astype(np.float64))
    b = Tensor(head.bias.data.astype(np.float64))
    return nn.softmax(nn.linear(pooled, W, b)).data


@dataclass
class ClassifierTraining:
    epochs: int = 20
    batch: int = 16
    lr: float = 1e-3
    seed: int = 0
    losses: list = field(default_factory=list)


def train_classifier(clips: list[AudioClip], cfg: EncoderConfig = EncoderConfig(),
                     train: ClassifierTraining | None = None, log=None) -> AudioClassifier:
    train = train or ClassifierTraining()
    labels = [c.label for c in clips]
    if len(set(labels)) < 2:
        raise ConfigError("classifier training needs both drone and background clips")
    rs = nn.RngState(train.seed)
    model = AudioClassifier(cfg, rs.spawn("init").generator)
    opt = nn.Adam(model.parameters(), lr=train.lr)
    sched = nn.CosineSchedule(period=train.epochs, min_scale=0.05)
    order_rng = rs.spawn("order").generator
    targets = np.array([LABELS.index(lab) for lab in labels])
    for epoch in range(train.epochs):
        order = order_rng.permutation(len(clips))
        total = 0.0
        for start in range(0, len(order), train.batch):
            opt.zero_grad()
            idx = order[start : start + train.batch]
            for i in idx:
                lp = nn.log_softmax(model.logits(clips[i]))
                loss = -lp[int(targets[i])] * (1.0 / len(idx))
                loss.backward()
                total += float(loss.data) * len(idx)
            opt.step()
        train.losses.append(total / len(clips))
        opt.scale = sched.step(epoch=epoch)
        if log:
            log(f"audio epoch {epoch}: loss {train.losses[-1]:.4f}")
    return model.eval()


def predict_scores(model: AudioClassifier, clips: list[AudioClip]) -> np.ndarray:
    """Drone probability per clip."""
    with nn.no_grad():
        return np.array([float(model(c).data[0]) for c in clips])


# -- spectra ------------------------------------------------------------------------------------------


def channel_spectrum(x: np.ndarray) -> np.ndarray:
    """One-sided magnitude spectrum ``|X_k| / N`` of a real signal."""
    x = np.asarray(x, dtype=np.float64)
    return np.abs(np.fft.rfft(x)) / x.size


def spectral_energy(mag: np.ndarray, n: int) -> float:
    """Time-domain energy implied by a one-sided ``|X_k|/N`` spectrum (Parseval)."""
    p = (np.asarray(mag) * n) ** 2
    inner = p[1:-1] if n % 2 == 0 else p[1:]
    edge = p[0] + (p[-1] if n % 2 == 0 else 0.0)
    return float((edge + 2 * inner.sum()) / n)


def average_spectrum(clips: list[AudioClip]) -> Spectrum:
    """Mean per-channel magnitude spectrum at 16 kHz over a set of clips (0 to 8 kHz)."""
    if not clips:
        raise ValueError("average_spectrum needs at least one clip")
    lengths = {np.shape(c.values if isinstance(c, AudioClip) else c) for c in clips}
    if len(lengths) != 1:
        raise ShapeError(f"clips of mixed lengths: {sorted(lengths)}")
    acc = None
    for c in clips:
        v = np.asarray(c.values if isinstance(c, AudioClip) else c, dtype=np.float64)
        halves = v.reshape(2, -1)
        mag = 0.5 * (channel_spectrum(halves[0]) + channel_spectrum(halves[1]))
        acc = mag if acc is None else acc + mag
    n = v.size // 2
    return Spectrum(np.fft.rfftfreq(n, 1.0 / SAMPLE_RATE), acc / len(clips), len(clips))


def peak_difference(a: Spectrum, b: Spectrum) -> float:
    """Frequency (Hz) where two mean spectra differ most in magnitude."""
    if a.freqs.shape != b.freqs.shape:
        raise ShapeError(f"spectra on different grids: {a.freqs.shape} vs {b.freqs.shape}")
    return float(a.freqs[int(np.argmax(np.abs(a.mean_amplitude - b.mean_amplitude)))])
