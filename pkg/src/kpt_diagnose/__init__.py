"""Evaluation and error diagnosis for multi-person keypoint detection."""

from .background import background_impact, clutter_stats, fn_heatmap, high_conf_fp_histogram
from .benchmarks import BenchmarkSpec, benchmark_eval, overlap_count, partition, sensitivity_impact
from .correction import CorrectionPlan, Stage, apply_correction, progressive_pr, separate_impact
from .data_model import (Detection, EmptyEvaluationError, EvalConfig, GtInstance, ImageRecord,
                         KeypointSchema, ValidationError, load_detections, load_ground_truth,
                         load_schema, make_detection, make_gt)
from .fixtures import InjectionSpec, ScoreMode, generate
from .matching import MatchSet, coco_ap, coco_ar, evaluate, match_all, match_image, pr_and_ap
from .report import Analysis, write_report
from .scoring import find_scoring_errors, optimal_rescore, rescore, rescore_report, soft_nms
from .similarity import calibrate_constants, keypoint_similarity, ks_radius, oks, oks_matrix
from .taxonomy import ErrorKind, classify_all, classify_detection, error_breakdown

__version__ = "0.1.0"

__all__ = [
    "Analysis",
    "apply_correction",
    "background_impact",
    "benchmark_eval",
    "BenchmarkSpec",
    "calibrate_constants",
    "classify_all",
    "classify_detection",
    "clutter_stats",
    "coco_ap",
    "coco_ar",
    "CorrectionPlan",
    "Detection",
    "EmptyEvaluationError",
    "error_breakdown",
    "ErrorKind",
    "EvalConfig",
    "evaluate",
    "find_scoring_errors",
    "fn_heatmap",
    "generate",
    "GtInstance",
    "high_conf_fp_histogram",
    "ImageRecord",
    "InjectionSpec",
    "keypoint_similarity",
    "KeypointSchema",
    "ks_radius",
    "load_detections",
    "load_ground_truth",
    "load_schema",
    "make_detection",
    "make_gt",
    "match_all",
    "match_image",
    "MatchSet",
    "oks",
    "oks_matrix",
    "optimal_rescore",
    "overlap_count",
    "partition",
    "pr_and_ap",
    "progressive_pr",
    "rescore",
    "rescore_report",
    "ScoreMode",
    "sensitivity_impact",
    "separate_impact",
    "soft_nms",
    "Stage",
    "ValidationError",
    "write_report",
]
