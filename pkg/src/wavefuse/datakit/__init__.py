"""Synchronization, annotation I/O, splits and synthetic scene generation."""

from .coco import (
    AnnotationFormatError,
    AnnotationSet,
    AnnotationWarning,
    DatasetStats,
    dataset_stats,
    make_annotation,
    read_annotations,
    validate,
    write_annotations,
)
from .dataset import Dataset, DatasetExistsError, load_dataset, scene_plan, write_dataset
from .splits import SplitSpec, make_splits
from .sync import SyncPair, counter_frame, counter_video, midpoint_frame, pair_video, read_counter
from .synth import Scene, SceneObject, SynthConfig, decode_png, encode_png, noise_only, synth_scene

__all__ = [name for name in dir() if not name.startswith("_")]
