"""Training, evaluation and reporting."""

from .audit import AuditResult, gradient_audit, tiny_instance
from .iterative import IterativeResult, StepCost, iterative_protocol, measure_epoch
from .metrics import MetricSet, WinnerTable, compute_metrics, per_location_report
from .report import (
    load_checkpoint, save_checkpoint, seed_summary, write_json, write_location_csv, write_loss_curves,
)
from .train import (
    Checkpoint, PreparedData, TrainReport, TrainingDiverged, Window, baseline_gru, build_model,
    evaluate, fit, predict_window, prepare, standard_windows, train,
)

__all__ = [
    "AuditResult", "Checkpoint", "IterativeResult", "MetricSet", "PreparedData", "StepCost", "TrainReport",
    "TrainingDiverged", "Window", "WinnerTable", "baseline_gru", "build_model", "compute_metrics",
    "evaluate", "fit", "iterative_protocol", "load_checkpoint", "measure_epoch", "per_location_report",
    "predict_window", "prepare", "save_checkpoint", "seed_summary", "standard_windows", "train",
    "write_json", "write_location_csv", "write_loss_curves", "gradient_audit", "tiny_instance",
]
