"""Metrics CSV: a ``#`` description line, the fixed header, one row per record.

Rows are appended as they are produced, so a diverged or interrupted run keeps
everything logged up to that point.
"""

import logging
from pathlib import Path
from typing import Dict, Union

import pandas as pd

logger = logging.getLogger(__name__)

METRICS_COLUMNS = [
    "step",
    "train_reward",
    "eval_reward",
    "loss",
    "grad_norm",
    "delta_mean_abs",
    "delta_max_abs",
    "k1_mean",
    "k3_mean",
    "clip_fraction",
    "rejection_rate",
    "tis_truncation_rate",
    "diverged",
]


def header_comment(**fields) -> str:
    """``# key=value ...`` line; keys keep their given order."""
    return "# " + " ".join(f"{k}={v}" for k, v in fields.items())


class MetricsWriter:
    """Appends MetricsRecord rows to a CSV file."""

    def __init__(self, path: Union[str, Path], comment: str):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w", encoding="utf-8", newline="") as fh:
            fh.write(comment.rstrip("\n") + "\n")
            pd.DataFrame(columns=METRICS_COLUMNS).to_csv(fh, index=False)

    def append(self, row: Dict[str, object]) -> None:
        frame = pd.DataFrame([row], columns=METRICS_COLUMNS)
        frame.to_csv(self.path, mode="a", header=False, index=False)


def read_metrics(path: Union[str, Path]) -> pd.DataFrame:
    """Load a metrics CSV, skipping the description line."""
    return pd.read_csv(Path(path), comment="#")


def read_metrics_comment(path: Union[str, Path]) -> Dict[str, str]:
    """Parse the ``# key=value`` description line."""
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline().strip()
    if not first.startswith("#"):
        return {}
    pairs = [item.split("=", 1) for item in first[1:].split() if "=" in item]
    return {k: v for k, v in pairs}
