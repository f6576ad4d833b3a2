"""Evaluation Service - 照合、AP / mAP@0.5、ACA、レポート"""

from src.services.evaluation.detections_io import DETECTIONS_FILE, load_detections, save_detections
from src.services.evaluation.evaluator import (
    evaluate_detections,
    evaluate_model,
    evaluate_model_with_detections,
    ground_truth,
    predict_images,
)
from src.services.evaluation.matching import match_detections, score_order
from src.services.evaluation.render import detection_label, render_detections
from src.services.evaluation.report import (
    REPORT_JSON,
    REPORT_TEXT,
    build_report,
    emit_report,
    format_report,
    load_report,
    read_report_csv,
    rows_frame,
    summary_table,
)
from src.services.evaluation.scoring import (
    aca,
    average_precision,
    class_level_scores,
    hierarchy_consistency,
    instance_percentages,
    label_aps,
    map_at_50,
    matched_pairs,
    mean_ap,
    per_label_accuracy,
)

__all__ = [
    "DETECTIONS_FILE",
    "load_detections",
    "save_detections",
    "evaluate_detections",
    "evaluate_model",
    "evaluate_model_with_detections",
    "ground_truth",
    "predict_images",
    "match_detections",
    "score_order",
    "detection_label",
    "render_detections",
    "REPORT_JSON",
    "REPORT_TEXT",
    "build_report",
    "emit_report",
    "format_report",
    "load_report",
    "read_report_csv",
    "rows_frame",
    "summary_table",
    "aca",
    "average_precision",
    "class_level_scores",
    "hierarchy_consistency",
    "instance_percentages",
    "label_aps",
    "map_at_50",
    "matched_pairs",
    "mean_ap",
    "per_label_accuracy",
]
