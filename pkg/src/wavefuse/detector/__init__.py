"""Deformable-attention set detector, matching and set loss."""

from .boxes import (
    cxcywh_to_xywh,
    cxcywh_to_xyxy,
    giou,
    giou_rows,
    pairwise_giou,
    xywh_to_cxcywh,
    xyxy_to_cxcywh,
)
from .loss import DRONE, NO_OBJECT, detection_loss, set_loss
from .matching import MatchResult, hungarian, match_cost
from .model import (
    Backbone,
    DeformableAttention,
    DetectionOutput,
    Detector,
    DetectorConfig,
    sine_position,
    token_reference_points,
)

__all__ = [name for name in dir() if not name.startswith("_")]
