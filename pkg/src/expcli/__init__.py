"""Command-line surface, config files and self-test."""

from .schema import (
    CellSpec,
    MatrixConfig,
    RunManifest,
    build_train_config,
    config_hash,
    load_matrix,
    load_train_config,
)
from .commands import analyze_trace, cmd_analyze, cmd_compare, cmd_run
from .selftest import SelfTestHooks, cmd_selftest

__all__ = [
    "CellSpec",
    "MatrixConfig",
    "RunManifest",
    "build_train_config",
    "config_hash",
    "load_matrix",
    "load_train_config",
    "analyze_trace",
    "cmd_analyze",
    "cmd_compare",
    "cmd_run",
    "SelfTestHooks",
    "cmd_selftest",
]
