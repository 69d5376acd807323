"""Deterministic, batch-invariant numeric kernels and their execution profiles."""

from .precision import PrecisionKind, PrecisionMode, fixed_point_logprobs, quantize, quantize_array
from .profiles import (
    CALIBRATED_MISMATCH,
    EXACT,
    PROFILES,
    ExecutionProfile,
    ReductionKind,
    ReductionOrder,
    get_profile,
    profile_name,
)
from .reduce import check_finite, det_sum, fold_sum, prefix_sums, reduce_axis, tiled_reduce
from .ops import as_matrix, log_softmax_bi, matmul_bi, rmsnorm_bi

__all__ = [
    "PrecisionKind",
    "PrecisionMode",
    "fixed_point_logprobs",
    "quantize",
    "quantize_array",
    "CALIBRATED_MISMATCH",
    "EXACT",
    "PROFILES",
    "ExecutionProfile",
    "ReductionKind",
    "ReductionOrder",
    "get_profile",
    "profile_name",
    "check_finite",
    "det_sum",
    "fold_sum",
    "prefix_sums",
    "reduce_axis",
    "tiled_reduce",
    "as_matrix",
    "log_softmax_bi",
    "matmul_bi",
    "rmsnorm_bi",
]
