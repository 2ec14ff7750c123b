"""Reproducible end-to-end experiments shared by the acceptance suite and the example scripts."""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np

from . import audio as au
from .config import DataBlock, ExperimentConfig, InitBlock, OptimizerBlock
from .datakit import SynthConfig, synth_scene
from .datakit.dataset import write_dataset
from .datakit.splits import SplitSpec
from .evalkit import ConfusionCounts, classification_metrics
from .fusion import FusionConfig
from .nn_core import derive_seed
from .pipeline import run_eval, run_training

# rgb baseline first, then the gated model warm-started from it; epochs sized for a single CPU core
RGB_EPOCHS, RGB_LR = 15, 5e-4
GATED_EPOCHS, GATED_LR, GATE_BIAS = 8, 2e-4, 2.0


def direction_of_effect(work_dir, seed: int = 0, log=None) -> dict:
    """Train the rgb-only and gated-fusion detectors on a 512/128/128 synthetic set; report test mAP."""
    t0 = time.perf_counter()
    work = Path(work_dir)
    data = DataBlock(path=str(work / "data"), n=768, split=SplitSpec(counts=(512, 128, 128)))
    write_dataset(data.path, data.n, seed, data.synth, data.split, force=True)
    base = ExperimentConfig(data=data, seed=seed)

    rgb = base.replace(optimizer=OptimizerBlock(epochs=RGB_EPOCHS, lr=RGB_LR))
    run_training(rgb, data.path, work / "rgb", log=log)
    gated = base.replace(
        fusion=FusionConfig("gated", gate_bias_init=GATE_BIAS),
        optimizer=OptimizerBlock(epochs=GATED_EPOCHS, lr=GATED_LR),
        init=InitBlock("warm-start", rgb_checkpoint=str(work / "rgb" / "checkpoint.ckpt")),
    )
    run_training(gated, data.path, work / "gated", log=log)

    maps = {name: run_eval(work / name / "checkpoint.ckpt", data.path, "test", work / name).map
            for name in ("rgb", "gated")}
    return {
        "rgb": maps["rgb"],
        "gated": maps["gated"],
        "small_gain": maps["gated"]["small"] - maps["rgb"]["small"],
        "all_gain": maps["gated"]["all"] - maps["rgb"]["all"],
        "seconds": time.perf_counter() - t0,
    }


def _clips(seed: int, tag: str, n: int, cfg: SynthConfig) -> list[au.AudioClip]:
    return [synth_scene(derive_seed(seed, f"{tag}/{i}"), cfg).clip for i in range(n)]


def audio_classifier(seed: int = 0, n_train: int = 400, n_test: int = 200, cfg: SynthConfig = SynthConfig()) -> dict:
    """Hum-vs-noise classifier trained and scored on disjoint synthetic clips."""
    t0 = time.perf_counter()
    train = _clips(seed, "audio-train", n_train, cfg)
    test = _clips(seed, "audio-test", n_test, cfg)
    model = au.train_classifier(train, au.EncoderConfig(), au.ClassifierTraining(seed=derive_seed(seed, "audio")))
    seconds = time.perf_counter() - t0
    scores = au.predict_scores(model, test)
    y = np.array([c.label == "drone" for c in test], dtype=int)
    metrics = classification_metrics(ConfusionCounts.from_labels(y, scores >= 0.5), y, scores)
    return {**metrics, "train_seconds": seconds}


def spectral_peak(seed: int, n: int = 40, cfg: SynthConfig = SynthConfig()) -> float:
    """Frequency of the largest gap between the mean drone and mean background spectra."""
    clips = _clips(seed, "spectrum", n, cfg)
    drone = [c for c in clips if c.label == "drone"]
    background = [c for c in clips if c.label == "background"]
    return au.peak_difference(au.average_spectrum(drone), au.average_spectrum(background))
