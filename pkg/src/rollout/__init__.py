"""Rollout generation, trainer-side recomputation and mismatch diagnostics."""

from .records import LOGPROB_FIELDS, TokenRecord, Trajectory, TrajectoryBatch
from .engine import assign_advantages, generate_batch, recompute_old, refresh_current
from .diagnostics import TOKEN_SCOPE, DeltaStats, delta_stats, token_delta
from .traces import TraceData, TraceWriter, read_trace, records_to_batch, trajectory_record

__all__ = [
    "LOGPROB_FIELDS",
    "TokenRecord",
    "Trajectory",
    "TrajectoryBatch",
    "assign_advantages",
    "generate_batch",
    "recompute_old",
    "refresh_current",
    "TOKEN_SCOPE",
    "DeltaStats",
    "delta_stats",
    "token_delta",
    "TraceData",
    "TraceWriter",
    "read_trace",
    "records_to_batch",
    "trajectory_record",
]
