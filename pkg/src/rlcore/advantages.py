"""Advantage estimators: batch whitening (REINFORCE) and group whitening (GRPO)."""

from enum import Enum
from typing import Sequence

import numpy as np

from src.kernels import fold_sum

STD_EPS = 1e-8


class AdvMode(str, Enum):
    BATCH_WHITEN = "batch_whiten"
    GRPO_GROUP = "grpo_group"


def _whiten(values: np.ndarray) -> np.ndarray:
    n = values.size
    mean = fold_sum(values) / n
    centred = values - mean
    std = np.sqrt(fold_sum(centred * centred) / n)
    return centred / (std + STD_EPS)


def adv_batch_whiten(rewards: Sequence[float]) -> np.ndarray:
    """``(R - mean) / (std + 1e-8)`` over the whole batch, population std.

    Raises:
        ValueError: for fewer than two trajectories.
    """
    values = np.asarray(rewards, dtype=np.float64).reshape(-1)
    if values.size < 2:
        raise ValueError(f"batch whitening needs >= 2 trajectories, got {values.size}")
    return _whiten(values)


def adv_grpo(groups: Sequence[Sequence[float]], group_size: int) -> np.ndarray:
    """Whiten rewards within each prompt's group; returns them flattened in group order.

    Raises:
        ValueError: if ``group_size < 2`` or any group is not exactly ``group_size`` long.
    """
    if group_size < 2:
        raise ValueError(f"group whitening needs G >= 2, got {group_size}")
    out = []
    for i, group in enumerate(groups):
        values = np.asarray(group, dtype=np.float64).reshape(-1)
        if values.size != group_size:
            raise ValueError(f"group {i} has {values.size} members, expected G = {group_size}")
        out.append(_whiten(values))
    return np.concatenate(out) if out else np.zeros(0)


def group_rewards(rewards: Sequence[float], group_size: int) -> list:
    """Split a flat ``(prompt_id, g)``-ordered reward list into groups of ``group_size``."""
    values = list(rewards)
    if group_size < 1 or len(values) % group_size:
        raise ValueError(f"{len(values)} rewards do not split into groups of {group_size}")
    return [values[i : i + group_size] for i in range(0, len(values), group_size)]


def compute_advantages(rewards: Sequence[float], mode: AdvMode, group_size: int) -> np.ndarray:
    """Dispatch on ``mode`` for a flat reward list."""
    if AdvMode(mode) is AdvMode.BATCH_WHITEN:
        return adv_batch_whiten(rewards)
    return adv_grpo(group_rewards(rewards, group_size), group_size)
