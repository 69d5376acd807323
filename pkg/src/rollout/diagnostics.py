"""Per-batch mismatch statistics.

delta_t = logp_old_train - logp_rollout over response tokens only. Prompt
tokens are never scored, so they never contribute.
"""

from dataclasses import dataclass

import numpy as np

from src.kernels import fold_sum
from src.rollout.records import TrajectoryBatch

TOKEN_SCOPE = "response"


@dataclass
class DeltaStats:
    per_token_delta: np.ndarray
    mean_abs: float
    max_abs: float
    top1_flip_rate: float
    token_count: int

    def as_dict(self) -> dict:
        return {
            "delta_mean_abs": self.mean_abs,
            "delta_max_abs": self.max_abs,
            "top1_flip_rate": self.top1_flip_rate,
            "token_count": self.token_count,
        }


def token_delta(logp_old_train: float, logp_rollout: float) -> float:
    return float(logp_old_train) - float(logp_rollout)


def delta_stats(batch: TrajectoryBatch) -> DeltaStats:
    """delta_t for every token plus batch mean/max of |delta_t| and the argmax flip rate.

    Rejected trajectories are included.

    Raises:
        MissingFieldError: if ``logp_old_train`` has not been computed.
    """
    old = batch.column("logp_old_train", "delta_stats")
    rollout = batch.column("logp_rollout", "delta_stats")
    if not old:
        return DeltaStats(np.zeros(0), 0.0, 0.0, 0.0, 0)

    delta = np.concatenate(old) - np.concatenate(rollout)
    abs_delta = np.abs(delta)
    n = delta.size

    flips, compared = 0, 0
    for traj in batch.trajectories:
        for rec in traj.tokens:
            if rec.rollout_top1 is not None and rec.train_top1 is not None:
                compared += 1
                flips += int(rec.rollout_top1 != rec.train_top1)

    return DeltaStats(
        per_token_delta=delta,
        mean_abs=fold_sum(abs_delta) / n if n else 0.0,
        max_abs=float(abs_delta.max()) if n else 0.0,
        top1_flip_rate=flips / compared if compared else 0.0,
        token_count=n,
    )
