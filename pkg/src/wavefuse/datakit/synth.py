"""Deterministic synthetic audio-visual drone scenes.

Each scene is a textured RGB frame with up to three quadcopter glyphs or,
in drone-free scenes, bird-like distractors; plus one second of stereo audio
that carries a motor hum if and only if a drone is present. At small pixel
sizes drones and distractors are drawn identically, so only the audio tells
them apart.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy import ndimage, signal

from ..audio import SAMPLE_RATE, AudioClip, Waveform, make_clip
from ..evalkit.detection import MEDIUM_MAX, SMALL_MAX
from ..nn_core import ConfigError, derive_seed

BACKGROUNDS = ("field", "trees", "buildings", "sky", "parking")
WEATHER = ("clear", "cloudy", "rain")
LIGHTING = ("day", "dusk")
SIZE_NAMES = ("small", "medium", "large")

_BASE = {  # (upper, lower) RGB of the backdrop
    "field": ((0.60, 0.75, 0.90), (0.35, 0.55, 0.25)),
    "trees": ((0.55, 0.70, 0.85), (0.15, 0.35, 0.15)),
    "buildings": ((0.65, 0.72, 0.80), (0.50, 0.48, 0.46)),
    "sky": ((0.45, 0.62, 0.90), (0.70, 0.80, 0.95)),
    "parking": ((0.62, 0.70, 0.82), (0.42, 0.42, 0.44)),
}
_NOISE_SCALE = {"clear": 1.0, "cloudy": 1.3, "rain": 2.0}
_DRONE_GREY = 0.16
_BIRD_RGB = (0.36, 0.27, 0.18)


@dataclass(frozen=True)
class SynthConfig:
    image_size: int = 128
    drone_prob: float = 0.5
    drone_count: tuple = (1, 3)
    distractor_count: tuple = (1, 3)
    size_weights: tuple = (0.5, 0.3, 0.2)
    distractor_size_weights: tuple = (0.6, 0.3, 0.1)
    small_area: tuple = (64.0, 900.0)
    medium_area: tuple = (1200.0, 8000.0)
    large_area: tuple = (9800.0, 12000.0)
    hum_band: tuple = (500.0, 2000.0)
    hum_f0: tuple = (700.0, 1400.0)
    hum_gain: float = 0.25
    noise_level: tuple = (0.01, 0.02)
    distance_scale: float = 600.0
    fps: int = 60
    seconds_per_video: int = 8

    def __post_init__(self):
        side = self.image_size
        if side <= 0 or side % 64:
            raise ConfigError(f"image_size must be a positive multiple of 64, got {side}")
        for name in ("small_area", "medium_area", "large_area"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ConfigError(f"{name} must satisfy 0 < lo <= hi, got {(lo, hi)}")
            if hi > 0.9 * side * side:
                raise ConfigError(f"{name} upper bound {hi} does not fit a {side}x{side} image")
        if not self.small_area[1] < SMALL_MAX <= self.medium_area[0]:
            raise ConfigError("small_area must stay below 32^2 and medium_area start at or above it")
        if not self.medium_area[1] < MEDIUM_MAX <= self.large_area[0]:
            raise ConfigError("medium_area must stay below 96^2 and large_area start at or above it")
        f_lo, f_hi = self.hum_f0
        if not self.hum_band[0] <= f_lo <= f_hi <= self.hum_band[1]:
            raise ConfigError(f"hum fundamental range {self.hum_f0} must lie inside the band {self.hum_band}")
        if not 0 <= self.drone_prob <= 1:
            raise ConfigError("drone_prob must be a probability")
        if self.drone_count[0] < 1 or self.drone_count[1] > 3 or self.drone_count[0] > self.drone_count[1]:
            raise ConfigError(f"drone_count must lie within 1..3, got {self.drone_count}")


@dataclass
class SceneObject:
    kind: str  # "drone" or "distractor"
    bbox: tuple  # x, y, w, h (integers)
    distance_m: float
    f0: float = 0.0

    @property
    def area(self) -> int:
        return self.bbox[2] * self.bbox[3]


@dataclass
class Scene:
    image: np.ndarray  # uint8 [H, W, 3]
    waveform: Waveform  # stereo, one second, 16 kHz
    objects: list
    tags: frozenset
    seed: int
    noise_sigma: float = 0.0

    @property
    def drones(self) -> list:
        return [o for o in self.objects if o.kind == "drone"]

    @property
    def has_drone(self) -> bool:
        return bool(self.drones)

    @property
    def clip(self) -> AudioClip:
        return make_clip(self.waveform, 0, "drone" if self.has_drone else "background")

    def annotations(self, image_id, first_id: int = 1) -> list[dict]:
        from .coco import make_annotation

        return [make_annotation(first_id + i, image_id, o.bbox, o.distance_m) for i, o in enumerate(self.drones)]

    def png_bytes(self) -> bytes:
        return encode_png(self.image)


def encode_png(img: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(img, dtype=np.uint8)).save(buf, format="PNG")
    return buf.getvalue()


def decode_png(blob: bytes) -> np.ndarray:
    return np.asarray(Image.open(io.BytesIO(blob)).convert("RGB"))


def sample_tags(rng: np.random.Generator) -> frozenset:
    return frozenset(str(rng.choice(opts)) for opts in (BACKGROUNDS, WEATHER, LIGHTING))


def _tag(tags, options, default):
    hit = [t for t in tags if t in options]
    return hit[0] if hit else default


# -- geometry ---------------------------------------------------------------------------------


def box_for_area(area: float, aspect: float) -> tuple[int, int]:
    """Integer (w, h) with w/h close to ``aspect`` and w*h close to ``area``."""
    w = max(1, int(round(np.sqrt(area * aspect))))
    h = max(1, int(round(area / w)))
    return w, h


def _sample_area(rng, cfg: SynthConfig, size: str) -> float:
    lo, hi = getattr(cfg, f"{size}_area")
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


def _fits(box, placed, margin=2) -> bool:
    x, y, w, h = box
    for px, py, pw, ph in placed:
        if x < px + pw + margin and px < x + w + margin and y < py + ph + margin and py < y + h + margin:
            return False
    return True


def _place(rng, w, h, side, placed, tries=60):
    if w > side or h > side:
        return None
    for _ in range(tries):
        x = int(rng.integers(0, side - w + 1))
        y = int(rng.integers(0, side - h + 1))
        if _fits((x, y, w, h), placed):
            return (x, y, w, h)
    return None


# -- rendering --------------------------------------------------------------------------------


def _background(rng, side: int, tags) -> np.ndarray:
    upper, lower = (np.array(c) for c in _BASE[_tag(tags, BACKGROUNDS, "field")])
    horizon = rng.uniform(0.35, 0.65)
    yy = (np.arange(side) + 0.5) / side
    blend = np.clip((yy - horizon) * 8 + 0.5, 0, 1)[:, None, None]
    img = np.broadcast_to(upper * (1 - blend) + lower * blend, (side, side, 3)).copy()
    scale = _NOISE_SCALE[_tag(tags, WEATHER, "clear")]
    coarse = rng.normal(0, 0.06 * scale, size=(8, 8, 3))
    img += ndimage.zoom(coarse, (side / 8, side / 8, 1), order=1)
    img += rng.normal(0, 0.015 * scale, size=img.shape)
    if "rain" in tags:
        streaks = rng.random((side, side)) < 0.01
        img[ndimage.binary_dilation(streaks, structure=np.ones((4, 1), bool))] += 0.15
    if "dusk" in tags:
        img = img * 0.6 + np.array([0.12, 0.05, 0.0])
    return img


def _pixel_grid(w, h):
    return np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)


def _blob_mask(w, h):
    u, v = _pixel_grid(w, h)
    return ((u - w / 2) / (w / 2)) ** 2 + ((v - h / 2) / (h / 2)) ** 2 <= 1.0


def _segment_dist(u, v, p, q):
    p, q = np.asarray(p, float), np.asarray(q, float)
    d = q - p
    t = np.clip(((u - p[0]) * d[0] + (v - p[1]) * d[1]) / max(d @ d, 1e-9), 0, 1)
    return np.hypot(u - p[0] - t * d[0], v - p[1] - t * d[1])


def _quad_mask(w, h):
    u, v = _pixel_grid(w, h)
    r = 0.24 * min(w, h)
    centres = [(r, r), (w - r, r), (r, h - r), (w - r, h - r)]
    mask = ((u - w / 2) / (0.2 * w)) ** 2 + ((v - h / 2) / (0.16 * h)) ** 2 <= 1
    for cx, cy in centres:
        d = np.hypot(u - cx, v - cy)
        mask |= (d <= r) & (d >= 0.6 * r)
        mask |= d <= 0.2 * r
        mask |= _segment_dist(u, v, (w / 2, h / 2), (cx, cy)) <= 0.05 * min(w, h) + 0.5
    return mask


def _bird_mask(w, h):
    u, v = _pixel_grid(w, h)
    t = 0.1 * min(w, h) + 0.5
    mask = _segment_dist(u, v, (t, t), (w / 2, 0.7 * h)) <= t
    mask |= _segment_dist(u, v, (w - t, t), (w / 2, 0.7 * h)) <= t
    mask |= ((u - w / 2) / (0.12 * w)) ** 2 + ((v - 0.8 * h) / (0.2 * h)) ** 2 <= 1
    return mask


def _draw(img, rng, obj: SceneObject, dusk: bool):
    x, y, w, h = obj.bbox
    if obj.area < SMALL_MAX:
        mask = _blob_mask(w, h)
        colour = np.full(3, _DRONE_GREY) + rng.normal(0, 0.04)
    elif obj.kind == "drone":
        mask = _quad_mask(w, h)
        colour = np.full(3, _DRONE_GREY) + rng.normal(0, 0.04)
    else:
        mask = _bird_mask(w, h)
        colour = np.array(_BIRD_RGB) + rng.normal(0, 0.04)
    if dusk:
        colour = colour * 0.6
    patch = img[y:y + h, x:x + w]
    patch[mask] = colour + rng.normal(0, 0.02, size=(int(mask.sum()), 3))


# -- audio ------------------------------------------------------------------------------------


def _noise(rng, sigma: float, n: int, tags) -> np.ndarray:
    """Two channels of broadband noise with a gentle low-frequency wind component."""
    white = rng.normal(0, sigma, size=(2, n))
    b, a = signal.butter(2, 400 / (SAMPLE_RATE / 2))
    wind = signal.lfilter(b, a, rng.normal(0, sigma, size=(2, n)), axis=1)
    out = white + 0.8 * wind
    if "rain" in tags:
        out += rng.normal(0, 0.5 * sigma, size=(2, n))
    return out


def hum(f0: float, amplitude: float, n: int, rng) -> np.ndarray:
    """Stereo motor hum: fundamental plus two weaker harmonics, small inter-channel delay."""
    t = np.arange(n) / SAMPLE_RATE
    phase = rng.uniform(0, 2 * np.pi, size=3)
    delay = rng.uniform(-5e-4, 5e-4)
    pan = rng.uniform(0.8, 1.0, size=2)
    out = np.zeros((2, n))
    for ch, shift in enumerate((0.0, delay)):
        for k, (gain, ph) in enumerate(zip((1.0, 0.35, 0.15), phase), start=1):
            out[ch] += gain * np.sin(2 * np.pi * k * f0 * (t + shift) + ph)
    return amplitude * pan[:, None] * out


def scene_audio(rng, drones, sigma: float, tags, n: int = SAMPLE_RATE, hum_gain: float = 0.25) -> np.ndarray:
    audio = _noise(rng, sigma, n, tags)
    for d in drones:
        audio += hum(d.f0, hum_gain / d.distance_m, n, rng)
    return np.clip(audio, -1.0, 1.0)


# -- scenes -----------------------------------------------------------------------------------


def synth_scene(seed: int, cfg: SynthConfig = SynthConfig(), tags=None, n_drones: int | None = None,
                areas=None) -> Scene:
    """Render one scene. ``n_drones`` and ``areas`` pin the content for tests."""
    rng = np.random.default_rng(derive_seed(seed, "scene"))
    side = cfg.image_size
    tags = frozenset(tags) if tags is not None else sample_tags(rng)
    if areas is not None:
        areas = [float(a) for a in areas]
        for a in areas:
            if a > side * side:
                raise ConfigError(f"requested drone area {a} exceeds the {side}x{side} image")
        n_drones = len(areas)
    if n_drones is None:
        has = rng.random() < cfg.drone_prob
        n_drones = int(rng.integers(cfg.drone_count[0], cfg.drone_count[1] + 1)) if has else 0
    if n_drones > 3:
        raise ConfigError(f"at most 3 drones per scene, got {n_drones}")

    kinds, sizes = [], []
    if n_drones:
        kinds = ["drone"] * n_drones
        weights = cfg.size_weights
    else:
        kinds = ["distractor"] * int(rng.integers(cfg.distractor_count[0], cfg.distractor_count[1] + 1))
        weights = cfg.distractor_size_weights
    p = np.asarray(weights, float) / np.sum(weights)
    sizes = [SIZE_NAMES[i] for i in rng.choice(3, size=len(kinds), p=p)]
    if areas is None:
        areas = [_sample_area(rng, cfg, s) for s in sizes]

    objects, placed = [], []
    for kind, area in sorted(zip(kinds, areas), key=lambda ka: -ka[1]):
        for attempt in range(4):
            w, h = box_for_area(area, rng.uniform(1.0, 1.4))
            box = _place(rng, w, h, side, placed)
            if box is not None:
                break
            area = _sample_area(rng, cfg, "small") if attempt >= 1 else area * 0.5
        if box is None:
            continue
        placed.append(box)
        dist = cfg.distance_scale / np.sqrt(box[2] * box[3])
        f0 = float(rng.uniform(*cfg.hum_f0)) if kind == "drone" else 0.0
        objects.append(SceneObject(kind, box, float(round(dist, 3)), f0))
    if n_drones and not any(o.kind == "drone" for o in objects):
        raise ConfigError("could not place any drone; lower the requested areas")

    img = _background(rng, side, tags)
    for o in objects:
        _draw(img, rng, o, "dusk" in tags)
    image = (np.clip(img, 0, 1) * 255 + 0.5).astype(np.uint8)

    sigma = float(rng.uniform(*cfg.noise_level))
    audio = scene_audio(rng, [o for o in objects if o.kind == "drone"], sigma, tags, hum_gain=cfg.hum_gain)
    wave = Waveform(audio, SAMPLE_RATE)
    return Scene(image, wave, objects, tags, seed, sigma)


def noise_only(seed: int, cfg: SynthConfig = SynthConfig(), tags=frozenset({"field", "clear", "day"})) -> Waveform:
    """Audio from the background-noise model alone, for baseline comparisons."""
    rng = np.random.default_rng(derive_seed(seed, "noise-baseline"))
    sigma = float(rng.uniform(*cfg.noise_level))
    return Waveform(scene_audio(rng, [], sigma, tags), SAMPLE_RATE)


@dataclass
class SceneSpec:
    """Where a scene sits inside its synthetic source video."""

    index: int
    video: int
    segment_index: int
    frame_index: int
    tags: frozenset = field(default_factory=frozenset)
