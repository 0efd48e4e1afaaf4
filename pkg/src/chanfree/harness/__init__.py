"""Training, evaluation, sweeps, transfer, benchmarking and reports."""

from chanfree.harness.bench import EfficiencyReport, efficiency_bench
from chanfree.harness.checkpoint import load_checkpoint, save_checkpoint
from chanfree.harness.config import ExperimentConfig, dump_config, load_config
from chanfree.harness.metrics import accuracy, classification_metrics, confusion_matrix, macro_f1, per_class_f1
from chanfree.harness.report import EvalReport, FoldResult, report_emit, report_parse, summary_table
from chanfree.harness.sweep import DEFAULT_GRID, sweep_intensity
from chanfree.harness.training import evaluate, fit, load_dataset, train_run
from chanfree.harness.transfer import pretrain_multitask, transfer_run

__all__ = [
    "EfficiencyReport", "efficiency_bench", "load_checkpoint", "save_checkpoint", "ExperimentConfig", "dump_config",
    "load_config", "accuracy", "classification_metrics", "confusion_matrix", "macro_f1", "per_class_f1",
    "EvalReport", "FoldResult", "report_emit", "report_parse", "summary_table", "DEFAULT_GRID",
    "sweep_intensity", "evaluate", "fit", "load_dataset", "train_run", "pretrain_multitask", "transfer_run",
]
