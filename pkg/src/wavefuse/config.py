"""Experiment configuration: nested blocks parsed from JSON or TOML with strict key checking."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .datakit.splits import SplitSpec
from .datakit.synth import SynthConfig
from .detector import DetectorConfig
from .fusion import FusionConfig
from .nn_core import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

BACKBONE_LR_GRID = (0.0, 1e-4, 1e-5, 1e-6)
INITS = ("scratch", "warm-start")


@dataclass
class OptimizerBlock:
    lr: float = 2e-4
    backbone_lr: float | None = None
    schedule: str = "cosine"
    epochs: int = 60
    batch: int = 4
    clip_norm: float | None = 0.5
    weight_decay: float = 0.0
    dropout_grid: tuple = (0.0, 0.1, 0.2, 0.3)

    def __post_init__(self):
        if self.backbone_lr is not None and self.backbone_lr not in BACKBONE_LR_GRID:
            raise ConfigError(f"optimizer.backbone_lr must be one of {BACKBONE_LR_GRID}, got {self.backbone_lr}")
        if self.schedule not in ("cosine", "plateau", "none"):
            raise ConfigError(f"optimizer.schedule must be cosine, plateau or none, got {self.schedule!r}")
        if self.epochs < 0 or self.batch < 1:
            raise ConfigError("optimizer.epochs must be >= 0 and optimizer.batch >= 1")
        if any(not 0 <= p < 1 for p in self.dropout_grid):
            raise ConfigError(f"optimizer.dropout_grid entries must lie in [0, 1): {self.dropout_grid}")


@dataclass
class DataBlock:
    path: str | None = None
    n: int = 768
    synth: SynthConfig = field(default_factory=SynthConfig)
    split: SplitSpec = field(default_factory=lambda: SplitSpec(counts=(512, 128, 128)))

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError(f"data.n must be >= 1, got {self.n}")


@dataclass
class AudioBlock:
    """Pretraining of the audio encoder as a hum-vs-noise classifier; the encoder is then frozen."""

    epochs: int = 20
    lr: float = 1e-3
    batch: int = 16


@dataclass
class InitBlock:
    kind: str = "scratch"
    rgb_checkpoint: str | None = None  # required for warm-start outside a sweep
    rgb_epochs: int | None = None  # sweep only: epochs for the rgb-only run that seeds warm starts

    def __post_init__(self):
        if self.kind not in INITS:
            raise ConfigError(f"init.kind must be one of {INITS}, got {self.kind!r}")


@dataclass
class SweepBlock:
    modes: tuple = ("linear", "mlp", "gated", "xattn")
    inits: tuple = INITS

    def __post_init__(self):
        if not self.modes or not self.inits:
            raise ConfigError("sweep grid is empty")
        for m in self.modes:
            FusionConfig(m)
        for i in self.inits:
            InitBlock(i)


@dataclass
class ExperimentConfig:
    model: DetectorConfig = field(default_factory=DetectorConfig)
    fusion: FusionConfig | None = None
    optimizer: OptimizerBlock = field(default_factory=OptimizerBlock)
    data: DataBlock = field(default_factory=DataBlock)
    audio: AudioBlock = field(default_factory=AudioBlock)
    init: InitBlock = field(default_factory=InitBlock)
    sweep: SweepBlock = field(default_factory=SweepBlock)
    seed: int = 0
    out: str | None = None

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        return _build(cls, raw, "")

    def to_dict(self) -> dict:
        return _plain(self)

    def identity(self) -> dict:
        """Everything that determines the run's results; the output location is excluded."""
        d = self.to_dict()
        d.pop("out")
        return d

    def hash(self) -> str:
        blob = json.dumps(self.identity(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


_NESTED = {
    (ExperimentConfig, "model"): DetectorConfig,
    (ExperimentConfig, "fusion"): FusionConfig,
    (ExperimentConfig, "optimizer"): OptimizerBlock,
    (ExperimentConfig, "data"): DataBlock,
    (ExperimentConfig, "audio"): AudioBlock,
    (ExperimentConfig, "init"): InitBlock,
    (ExperimentConfig, "sweep"): SweepBlock,
    (DataBlock, "synth"): SynthConfig,
    (DataBlock, "split"): SplitSpec,
}


def _build(cls, raw, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where or 'config'} must be a table/object, got {type(raw).__name__}")
    names = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        path = f"{where}.{key}" if where else key
        if key not in names:
            raise ConfigError(f"unknown config key {path!r}")
        sub = _NESTED.get((cls, key))
        if sub is not None and value is not None:
            value = _build(sub, value, path)
        elif key == "test_tags":
            value = frozenset(value)
        elif isinstance(value, list):
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from None


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, frozenset):
        return sorted(obj)
    if isinstance(obj, (tuple, list)):
        return [_plain(v) for v in obj]
    return obj


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    text = path.read_bytes()
    try:
        raw = tomllib.loads(text.decode()) if path.suffix == ".toml" else json.loads(text)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return ExperimentConfig.from_dict(raw)
