"""Optimization loop, optimizers and metrics files."""

from .optim import Adam, OptimizerConfig, OptimizerKind, SGD, build_optimizer
from .metrics_io import (
    METRICS_COLUMNS,
    MetricsWriter,
    header_comment,
    read_metrics,
    read_metrics_comment,
)
from .loop import (
    ExperimentResult,
    MetricsRecord,
    TrainConfig,
    TrainState,
    derive_seed,
    evaluate,
    init_state,
    run_experiment,
    snapshot_old,
    train_step,
)

__all__ = [
    "Adam",
    "OptimizerConfig",
    "OptimizerKind",
    "SGD",
    "build_optimizer",
    "METRICS_COLUMNS",
    "MetricsWriter",
    "header_comment",
    "read_metrics",
    "read_metrics_comment",
    "ExperimentResult",
    "MetricsRecord",
    "TrainConfig",
    "TrainState",
    "derive_seed",
    "evaluate",
    "init_state",
    "run_experiment",
    "snapshot_old",
    "train_step",
]
