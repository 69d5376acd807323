"""Batch-invariant kernels: matmul, log-softmax and RMSNorm.

Every output row is computed from its own input row with a reduction whose
order is fixed by the ExecutionProfile alone, so row ``i`` is bitwise the same
whether it is evaluated alone or inside a batch of any size.
"""

from typing import Union

import numpy as np
import numpy.typing as npt

from src.errors import ShapeMismatchError
from src.kernels.precision import fixed_point_logprobs, quantize_array
from src.kernels.profiles import ExecutionProfile
from src.kernels.reduce import check_finite, tiled_reduce

Matrix = npt.NDArray[np.float64]


def as_matrix(values, name: str = "matrix") -> Matrix:
    """Coerce to a finite 2-D float64 array."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeMismatchError(f"{name} must be 2-D, got shape {arr.shape}")
    check_finite(arr, name)
    return arr


def matmul_bi(a: Matrix, b: Matrix, profile: ExecutionProfile) -> Matrix:
    """Matrix product with profile-fixed tiling and reduction order.

    Raises:
        ShapeMismatchError: if ``a.cols != b.rows``.
    """
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"Cannot multiply {a.shape} by {b.shape}: inner dimensions differ")

    a = quantize_array(a, profile.accum)
    b = quantize_array(b, profile.accum)
    # (rows, out_cols, inner): reduction axis last
    products = quantize_array(a[:, None, :] * b.T[None, :, :], profile.accum)
    return tiled_reduce(products, profile)


def log_softmax_bi(logits: Matrix, profile: ExecutionProfile) -> Matrix:
    """Row-wise log-softmax: shift by the row max, exponentiate, reduce, log, subtract.

    Under a profile with ``prob_frac_bits`` the result is the log of the
    fixed-point probabilities (see :func:`fixed_point_logprobs`).

    Raises:
        ShapeMismatchError: if a row is empty.
    """
    x = as_matrix(logits, "logits")
    if x.shape[1] == 0:
        raise ShapeMismatchError("log_softmax_bi needs at least one column per row")

    x = quantize_array(x, profile.accum)
    shifted = profile.round_activations(x - x.max(axis=1, keepdims=True))
    exps = quantize_array(np.exp(shifted), profile.accum)
    total = tiled_reduce(exps, profile)
    log_total = quantize_array(np.log(total), profile.accum)
    out = profile.round_activations(shifted - log_total[:, None])
    if profile.prob_frac_bits is not None:
        out = fixed_point_logprobs(out, profile.prob_frac_bits)
    return out


def rmsnorm_bi(
    x: Union[np.ndarray, Matrix],
    gamma: np.ndarray,
    eps: float,
    profile: ExecutionProfile,
) -> np.ndarray:
    """RMSNorm ``gamma * x / sqrt(mean(x**2) + eps)`` over the last axis.

    Accepts a single vector or a batch of row vectors.

    Raises:
        ShapeMismatchError: if ``x`` and ``gamma`` lengths differ.
    """
    arr = np.asarray(x, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    if arr.ndim not in (1, 2) or arr.shape[-1] != gamma.shape[-1] or gamma.ndim != 1:
        raise ShapeMismatchError(
            f"rmsnorm_bi needs x of length {gamma.shape} (or rows of it), got {arr.shape}"
        )
    if eps <= 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    check_finite(arr, "rmsnorm input")

    rows = arr if arr.ndim == 2 else arr[None, :]
    squares = quantize_array(rows * rows, profile.accum)
    mean_sq = quantize_array(tiled_reduce(squares, profile) / rows.shape[1], profile.accum)
    inv_rms = quantize_array(1.0 / np.sqrt(mean_sq + eps), profile.accum)
    out = profile.round_activations(gamma[None, :] * (rows * inv_rms[:, None]))
    return out if arr.ndim == 2 else out[0]
