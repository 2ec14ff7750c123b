"""Detection mAP by size bucket and binary classification metrics."""

from .classification import (
    METRIC_NAMES,
    ConfusionCounts,
    EvaluationError,
    classification_metrics,
    mcc,
    pr_auc,
    roc_auc,
)
from .detection import (
    BUCKETS,
    IOU_THRESHOLDS,
    Detection,
    EvalReport,
    GroundTruth,
    average_precision,
    bucket_of,
    in_bucket,
    iou,
    iou_matrix,
    map_report,
)
from .tables import report_csv, results_table, table_csv, table_json

__all__ = [name for name in dir() if not name.startswith("_")]
