"""Pairing 1-second audio segments with the video frame at their midpoint."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..audio import SAMPLE_RATE, AudioClip, Waveform, make_clip, n_segments


def midpoint_frame(segment_index: int, fps: float) -> int:
    """Index of the frame at the centre of second ``segment_index``; halves round up."""
    if fps <= 0:
        raise ValueError(f"fps must be positive, got {fps}")
    if segment_index < 0:
        raise ValueError(f"segment index must be >= 0, got {segment_index}")
    return int(math.floor((segment_index + 0.5) * fps + 0.5))


@dataclass
class SyncPair:
    frame_index: int
    segment_index: int
    image: object = None  # path or array
    clip: AudioClip | None = None
    tags: frozenset = field(default_factory=frozenset)
    source_id: str = ""


def pair_video(frames, audio: Waveform, fps: float, tags=(), source_id: str = "") -> list[SyncPair]:
    """Cut ``audio`` into 1 s segments and attach the midpoint frame of each.

    ``frames`` is any indexable sequence of frames. Segments whose midpoint
    frame falls past the end of the video are dropped.
    """
    pairs = []
    for k in range(n_segments(audio)):
        idx = midpoint_frame(k, fps)
        if idx >= len(frames):
            break
        pairs.append(SyncPair(idx, k, frames[idx], make_clip(audio, k, source_id=source_id),
                              frozenset(tags), source_id))
    return pairs


# -- counter-payload test video ------------------------------------------------------------


def counter_frame(counter: int, size: int = 8) -> np.ndarray:
    """Grey frame whose first 32 pixels spell ``counter`` in binary (LSB first)."""
    img = np.zeros((size, size), dtype=np.uint8)
    bits = [(counter >> i) & 1 for i in range(32)]
    img.reshape(-1)[:32] = np.array(bits, dtype=np.uint8) * 255
    return img


def read_counter(frame: np.ndarray) -> int:
    bits = (np.asarray(frame).reshape(-1)[:32] > 127).astype(np.int64)
    return int(np.sum(bits << np.arange(32)))


def counter_video(seconds: int, fps: int = 60, seed: int = 0) -> tuple[list[np.ndarray], Waveform]:
    """Frames carrying their own index plus a stereo noise track of matching length."""
    frames = [counter_frame(i) for i in range(int(seconds * fps))]
    rng = np.random.default_rng(seed)
    audio = Waveform(rng.normal(0, 0.05, size=(2, seconds * SAMPLE_RATE)), SAMPLE_RATE)
    return frames, audio
