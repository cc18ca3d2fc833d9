"""Downstream segmentation and change-detection harness."""
from .experiment import (ExperimentGrid, assert_disjoint, evaluate, render_table, run_experiment,
                         train_cd_model, train_segmenter, write_experiment_report)
from .metrics import confusion_matrix, f1, miou, per_class_iou
from .models import SiameseChangeDetector, SmallSegmenter

__all__ = [
    "ExperimentGrid", "SiameseChangeDetector", "SmallSegmenter", "assert_disjoint", "confusion_matrix",
    "evaluate", "f1", "miou", "per_class_iou", "render_table", "run_experiment", "train_cd_model",
    "train_segmenter", "write_experiment_report",
]
