"""Command-line entry point: ``wavefuse synth|train|eval|sweep|audio|verify``.

Exit codes: 0 success, 1 partial sweep failure, 2 usage or I/O error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import audio as au
from .config import ExperimentConfig, load_config
from .datakit.dataset import DatasetExistsError, load_dataset, write_dataset
from .evalkit import ConfusionCounts, EvaluationError, classification_metrics
from .nn_core import ConfigError, NumericError
from .nn_core import checkpoint as ckpt
from .nn_core.checkpoint import CheckpointError
from .pipeline import dumps_json, pretrain_audio, run_eval, run_sweep, run_training
from .verify import MUTATIONS, run_checks

EXIT_OK, EXIT_PARTIAL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.out is not None:
        cfg = cfg.replace(out=str(args.out))
    if getattr(args, "data", None):
        cfg = cfg.replace(data=dataclasses.replace(cfg.data, path=str(args.data)))
    return cfg


def _out_dir(cfg: ExperimentConfig, force: bool, must_be_empty: bool = False) -> Path:
    if not cfg.out:
        raise ConfigError("no output directory; pass --out or set 'out' in the config")
    out = Path(cfg.out)
    if must_be_empty and out.exists() and any(out.iterdir()) and not force:
        raise DatasetExistsError(f"{out} is not empty; pass --force to overwrite")
    return out


def _data_root(cfg: ExperimentConfig) -> Path:
    if not cfg.data.path:
        raise ConfigError("no dataset; pass --data or set data.path in the config")
    return Path(cfg.data.path)


def cmd_synth(args) -> int:
    cfg = _config(args)
    n = args.n if args.n is not None else cfg.data.n
    split = cfg.data.split
    if args.n is not None and split.counts is not None and sum(split.counts) > n:
        _log(f"split counts {split.counts} exceed --n {n}; using ratios {split.ratios}")
        split = dataclasses.replace(split, counts=None)
    out = _out_dir(cfg, args.force, must_be_empty=True)
    ids = write_dataset(out, n, cfg.seed, cfg.data.synth, split, force=args.force)
    print(json.dumps({"out": str(out), "n": n, **{k: len(v) for k, v in ids.items()}}))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out_dir(cfg, args.force, must_be_empty=True)
    run = run_training(cfg, _data_root(cfg), out, log=_log)
    print(json.dumps({"checkpoint": str(run.checkpoint), "sha256": run.checkpoint_hash,
                      "val_map": run.report.map if run.report else None}))
    return EXIT_OK


def cmd_eval(args) -> int:
    if not Path(args.checkpoint).is_file():
        raise FileNotFoundError(f"checkpoint {args.checkpoint} does not exist")
    cfg = _config(args)
    out = Path(cfg.out) if cfg.out else Path(args.checkpoint).parent
    report = run_eval(args.checkpoint, _data_root(cfg), args.split, out)
    print(json.dumps({"split": args.split, "map": report.map, "counts": report.counts}))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    table, failures = run_sweep(cfg, _data_root(cfg), _out_dir(cfg, args.force), log=_log)
    print(json.dumps({"rows": len(table), "failed": sorted(failures)}))
    return EXIT_PARTIAL if failures else EXIT_OK


def _clips(ds, split):
    clips = [s.clip for s in ds.samples(split)]
    if not clips:
        raise ConfigError(f"split {split!r} holds no clips")
    return clips


def _metrics(model, clips) -> dict:
    scores = au.predict_scores(model, clips)
    y = np.array([c.label == "drone" for c in clips], dtype=int)
    return classification_metrics(ConfusionCounts.from_labels(y, scores >= 0.5), y, scores)


def cmd_audio(args) -> int:
    cfg = _config(args)
    ds = load_dataset(_data_root(cfg))
    out = _out_dir(cfg, args.force)
    if args.action == "train":
        clips = _clips(ds, "train")
        model = pretrain_audio([_ClipHolder(c) for c in clips], cfg, _log)
        digest = ckpt.save(out / "audio_classifier.ckpt", model.state_dict(), {"seed": cfg.seed})
        metrics = _metrics(model, _clips(ds, args.split))
        ckpt.atomic_write(out / f"audio_metrics_{args.split}.json", dumps_json(metrics))
        print(json.dumps({"checkpoint_sha256": digest, **metrics}))
    elif args.action == "eval":
        path = Path(args.checkpoint or out / "audio_classifier.ckpt")
        if not path.is_file():
            raise FileNotFoundError(f"audio checkpoint {path} does not exist")
        model = au.AudioClassifier(au.EncoderConfig())
        model.load_state_dict(ckpt.load(path)[0])
        metrics = _metrics(model.eval(), _clips(ds, args.split))
        ckpt.atomic_write(out / f"audio_metrics_{args.split}.json", dumps_json(metrics))
        print(json.dumps(metrics))
    else:
        clips = _clips(ds, args.split)
        drone = [c for c in clips if c.label == "drone"]
        background = [c for c in clips if c.label == "background"]
        if not drone or not background:
            raise ConfigError("spectrum comparison needs both drone and background clips")
        sd, sb = au.average_spectrum(drone), au.average_spectrum(background)
        ckpt.atomic_write(out / "spectrum_drone.csv", sd.to_csv().encode())
        ckpt.atomic_write(out / "spectrum_background.csv", sb.to_csv().encode())
        peak = au.peak_difference(sd, sb)
        summary = {"peak_difference_hz": peak, "n_drone": len(drone), "n_background": len(background)}
        ckpt.atomic_write(out / "spectrum_summary.json", dumps_json(summary))
        print(json.dumps(summary))
    return EXIT_OK


class _ClipHolder:
    """Adapter so bare clips can go through the sample-based pretraining helper."""

    def __init__(self, clip):
        self.clip = clip


def cmd_verify(args) -> int:
    results = run_checks(points=args.points, log=print, mutate=args.mutation)
    failed = [name for name, ok, _ in results if not ok]
    if failed:
        print(f"FAILED: {', '.join(failed)}")
        return EXIT_PARTIAL
    print("all checks passed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wavefuse", description="Audio-visual drone detection experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="JSON or TOML experiment config")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", type=Path, help="output directory")
        sp.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
        return sp

    s = common(sub.add_parser("synth", help="render a synthetic multimodal dataset"))
    s.add_argument("--n", type=int, help="number of scenes (default: data.n)")
    s.set_defaults(func=cmd_synth)

    s = common(sub.add_parser("train", help="train one detector variant"))
    s.add_argument("--data", type=Path, help="dataset directory (default: data.path)")
    s.set_defaults(func=cmd_train)

    s = common(sub.add_parser("eval", help="evaluate a checkpoint on a dataset split"))
    s.add_argument("--checkpoint", required=True, type=Path)
    s.add_argument("--data", type=Path)
    s.add_argument("--split", default="test", choices=("train", "val", "test"))
    s.set_defaults(func=cmd_eval)

    s = common(sub.add_parser("sweep", help="fusion mode x dropout x init grid"))
    s.add_argument("--data", type=Path)
    s.set_defaults(func=cmd_sweep)

    s = common(sub.add_parser("audio", help="hum-vs-noise classifier and spectra"))
    s.add_argument("action", choices=("train", "eval", "spectrum"))
    s.add_argument("--data", type=Path)
    s.add_argument("--split", default="test", choices=("train", "val", "test"))
    s.add_argument("--checkpoint", type=Path, help="classifier checkpoint for eval")
    s.set_defaults(func=cmd_audio)

    s = sub.add_parser("verify", help="run the invariant suite")
    s.add_argument("--points", type=int, default=10, help="random points per gradient check")
    s.add_argument("--mutation", choices=sorted(MUTATIONS), help="inject a known defect (suite self-test)")
    s.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericError as exc:
        _log(f"numeric failure: {exc}")
        return EXIT_NUMERIC
    except (ConfigError, EvaluationError, CheckpointError, OSError, KeyError) as exc:
        _log(f"error: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
