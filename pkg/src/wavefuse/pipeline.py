"""End-to-end runs shared by the command line and the experiment scripts."""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

from . import nn_core as nn
from .audio import AudioClassifier, ClassifierTraining, EncoderConfig, train_classifier
from .config import ExperimentConfig
from .datakit.dataset import load_dataset
from .detector import Detector
from .evalkit import EvalReport, report_csv, results_table, table_csv, table_json
from .fusion import FusionConfig
from .nn_core import ConfigError, derive_seed
from .nn_core import checkpoint as ckpt
from .train import TrainConfig, attach_embeddings, evaluate, train_detector, warm_start

MODE_NAMES = {"linear": "Linear", "mlp": "MLP", "gated": "Gated", "xattn": "Cross-Attention"}
AUDIO_PREFIX = "audio."


def package_version() -> str:
    try:
        return version("wavefuse")
    except PackageNotFoundError:
        return "unknown"


def method_name(cfg: ExperimentConfig) -> str:
    """Row label in result tables, e.g. ``RGB`` or ``Warm-Start Gated Fusion``."""
    if cfg.fusion is None:
        return "RGB"
    init = "Warm-Start" if cfg.init.kind == "warm-start" else "Scratch"
    return f"{init} {MODE_NAMES[cfg.fusion.mode]} Fusion"


def dumps_json(obj) -> bytes:
    return (json.dumps(obj, indent=1, sort_keys=True) + "\n").encode()


def pretrain_audio(samples, cfg: ExperimentConfig, log=None) -> AudioClassifier:
    """Hum-vs-noise classifier on the training clips; its encoder is reused frozen."""
    train = ClassifierTraining(epochs=cfg.audio.epochs, batch=cfg.audio.batch, lr=cfg.audio.lr,
                               seed=derive_seed(cfg.seed, "audio"))
    return train_classifier([s.clip for s in samples], EncoderConfig(), train, log)


def build_detector(cfg: ExperimentConfig, audio_dim: int = EncoderConfig().dim) -> Detector:
    return Detector(cfg.model, cfg.fusion, audio_dim=audio_dim, seed=derive_seed(cfg.seed, "detector"))


def train_config(cfg: ExperimentConfig) -> TrainConfig:
    o = cfg.optimizer
    return TrainConfig(epochs=o.epochs, lr=o.lr, backbone_lr=o.backbone_lr, batch=o.batch, clip_norm=o.clip_norm,
                       weight_decay=o.weight_decay, schedule=o.schedule, seed=derive_seed(cfg.seed, "train"))


@dataclass
class RunResult:
    checkpoint: Path
    checkpoint_hash: str
    report: EvalReport
    manifest: dict = field(default_factory=dict)


def _rgb_state(cfg: ExperimentConfig, rgb_state):
    if cfg.fusion is None or cfg.init.kind != "warm-start":
        return None
    if rgb_state is not None:
        return rgb_state
    if not cfg.init.rgb_checkpoint:
        raise ConfigError("init.kind = warm-start needs init.rgb_checkpoint")
    state, _ = ckpt.load(cfg.init.rgb_checkpoint)
    return {k: v for k, v in state.items() if not k.startswith(AUDIO_PREFIX)}


def run_training(cfg: ExperimentConfig, data_root, out_dir, rgb_state=None, log=None, samples=None) -> RunResult:
    """Train one variant, keep the best-validation weights, write checkpoint, report and manifest.

    ``samples`` may carry preloaded ``(train, val)`` lists; embeddings are recomputed either way.
    """
    t0 = time.perf_counter()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if samples is None:
        ds = load_dataset(data_root)
        train, val = ds.samples("train"), ds.samples("val")
    else:
        train, val = samples
    if not train:
        raise ConfigError("the training split is empty")

    state_extra = {}
    audio_dim = EncoderConfig().dim
    if cfg.fusion is not None:
        clf = pretrain_audio(train, cfg, log)
        attach_embeddings(train, clf.encoder)
        attach_embeddings(val, clf.encoder)
        state_extra = {AUDIO_PREFIX + k: v for k, v in clf.state_dict().items()}

    model = build_detector(cfg, audio_dim)
    warm = _rgb_state(cfg, rgb_state)
    if warm is not None:
        warm_start(model, warm)
    hist = train_detector(model, train, val, train_config(cfg), log)
    if hist.best_state is not None:
        model.load_state_dict(hist.best_state)

    meta = {"config": cfg.identity(), "config_hash": cfg.hash(), "best_epoch": hist.best_epoch}
    digest = ckpt.save(out / "checkpoint.ckpt", {**model.state_dict(), **state_extra}, meta)
    report = evaluate(model, val) if val else None
    reports = {}
    if report is not None:
        ckpt.atomic_write(out / "report_val.json", dumps_json(report.to_dict()))
        ckpt.atomic_write(out / "report_val.csv", report_csv(report).encode())
        reports = {"json": "report_val.json", "csv": "report_val.csv"}
    ckpt.atomic_write(out / "config.json", dumps_json(cfg.to_dict()))
    manifest = {
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "version": package_version(),
        "method": method_name(cfg),
        "train_loss": hist.train_loss,
        "val_loss": hist.val_loss,
        "best_epoch": hist.best_epoch,
        "steps": hist.steps,
        "checkpoint": "checkpoint.ckpt",
        "checkpoint_sha256": digest,
        "reports": reports,
        "wall_clock_s": round(time.perf_counter() - t0, 3),
    }
    ckpt.atomic_write(out / "manifest.json", dumps_json(manifest))
    return RunResult(out / "checkpoint.ckpt", digest, report, manifest)


def load_model(path) -> tuple[Detector, AudioClassifier | None, ExperimentConfig]:
    state, meta = ckpt.load(path)
    if "config" not in meta:
        raise ConfigError(f"{path} carries no experiment config")
    cfg = ExperimentConfig.from_dict(meta["config"])
    model = build_detector(cfg)
    model.load_state_dict({k: v for k, v in state.items() if not k.startswith(AUDIO_PREFIX)})
    clf = None
    audio = {k[len(AUDIO_PREFIX):]: v for k, v in state.items() if k.startswith(AUDIO_PREFIX)}
    if cfg.fusion is not None:
        if not audio:
            raise ConfigError(f"{path} is a fusion checkpoint without audio encoder weights")
        clf = AudioClassifier(EncoderConfig())
        clf.load_state_dict(audio)
        clf.eval()
    return model.eval(), clf, cfg


def run_eval(checkpoint, data_root, split: str, out_dir) -> EvalReport:
    model, clf, cfg = load_model(checkpoint)
    samples = load_dataset(data_root).samples(split)
    if clf is not None:
        attach_embeddings(samples, clf.encoder)
    report = evaluate(model, samples)
    out = Path(out_dir)
    rate = cfg.fusion.dropout_rate if cfg.fusion is not None else None
    table = results_table([(method_name(cfg), rate, report.map["all"])])
    ckpt.atomic_write(out / f"report_{split}.json", dumps_json(report.to_dict()))
    ckpt.atomic_write(out / f"report_{split}.csv", report_csv(report).encode())
    ckpt.atomic_write(out / f"table_{split}.json", table_json(table).encode())
    ckpt.atomic_write(out / f"table_{split}.csv", table_csv(table).encode())
    return report


# -- sweeps -------------------------------------------------------------------------------------------


def sweep_cells(cfg: ExperimentConfig) -> list[tuple[str, ExperimentConfig]]:
    """The rgb baseline followed by every (mode, dropout, init) cell, each with its own derived seed."""
    base_epochs = cfg.init.rgb_epochs if cfg.init.rgb_epochs is not None else cfg.optimizer.epochs
    rgb = cfg.replace(fusion=None, seed=derive_seed(cfg.seed, "rgb"),
                      optimizer=_with(cfg.optimizer, epochs=base_epochs), init=_with(cfg.init, kind="scratch"))
    cells = [("rgb", rgb)]
    base_fusion = cfg.fusion or FusionConfig("gated")
    for mode in cfg.sweep.modes:
        for rate in cfg.optimizer.dropout_grid:
            for init in cfg.sweep.inits:
                name = f"{mode}-d{rate:g}-{init}"
                fusion = _with(base_fusion, mode=mode, dropout_rate=float(rate))
                cells.append((name, cfg.replace(fusion=fusion, seed=derive_seed(cfg.seed, name),
                                                init=_with(cfg.init, kind=init))))
    return cells


def _with(obj, **changes):
    return dataclasses.replace(obj, **changes)


def run_sweep(cfg: ExperimentConfig, data_root, out_dir, log=None) -> tuple[dict, dict]:
    """Run (or resume) every cell; returns the all-bucket mAP table and per-cell failures."""
    out = Path(out_dir)
    ds = load_dataset(data_root)
    results, failures = {}, {}
    rgb_state = None
    for name, cell in sweep_cells(cfg):
        cell_dir = out / "cells" / name
        done = cell_dir / "result.json"
        try:
            if done.is_file():
                results[name] = json.loads(done.read_text())
            else:
                if log:
                    log(f"cell {name}")
                run = run_training(cell, None, cell_dir, rgb_state=rgb_state, log=log,
                                   samples=(ds.samples("train"), ds.samples("val")))
                results[name] = {"method": method_name(cell),
                                 "dropout": None if cell.fusion is None else cell.fusion.dropout_rate,
                                 "map": run.report.map if run.report else None}
                ckpt.atomic_write(done, dumps_json(results[name]))
            if name == "rgb":
                state, _ = ckpt.load(cell_dir / "checkpoint.ckpt")
                rgb_state = state
        except (nn.NumericError, ConfigError, OSError, ValueError) as exc:
            failures[name] = f"{type(exc).__name__}: {exc}"
            if log:
                log(f"cell {name} failed: {failures[name]}")
    cells = [(r["method"], r["dropout"], (r["map"] or {}).get("all")) for r in results.values()]
    table = results_table(cells)
    ckpt.atomic_write(out / "table.json", table_json(table).encode())
    ckpt.atomic_write(out / "table.csv", table_csv(table).encode())
    ckpt.atomic_write(out / "failures.json", dumps_json(failures))
    return table, failures
