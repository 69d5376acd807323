"""Ordered, deterministic reductions.

Everything here is built from elementwise float64 additions on numpy arrays,
so the combination order is exactly the one requested and does not depend on
array length, memory layout or thread count. Floating-point kernel, sampling
and loss arithmetic never calls library reductions (``np.sum``, ``np.dot``,
``np.cumsum``); their blocking is implementation defined.
"""

from typing import Sequence, Union

import numpy as np

from src.errors import NonFiniteInputError
from src.kernels.precision import PrecisionMode, quantize_array
from src.kernels.profiles import ExecutionProfile, ReductionKind, ReductionOrder


def check_finite(values: np.ndarray, what: str = "input") -> None:
    """Raise NonFiniteInputError naming the first non-finite index."""
    finite = np.isfinite(values)
    if not np.all(finite):
        idx = tuple(int(i) for i in np.argwhere(~finite)[0])
        raise NonFiniteInputError(
            f"Non-finite {what} value {values[idx]!r} at index {idx}", index=idx
        )


def _sequential(terms: np.ndarray, precision: PrecisionMode) -> np.ndarray:
    acc = terms[..., 0]
    for k in range(1, terms.shape[-1]):
        acc = quantize_array(acc + terms[..., k], precision)
    return acc


def _pairwise_tree(terms: np.ndarray, precision: PrecisionMode) -> np.ndarray:
    level = terms
    while level.shape[-1] > 1:
        n = level.shape[-1]
        half = n // 2
        paired = quantize_array(level[..., 0 : 2 * half : 2] + level[..., 1 : 2 * half : 2], precision)
        if n % 2:
            # odd tail is promoted to the next level unchanged
            paired = np.concatenate([paired, level[..., n - 1 :]], axis=-1)
        level = paired
    return level[..., 0]


def _blocked(terms: np.ndarray, block_size: int, precision: PrecisionMode) -> np.ndarray:
    n = terms.shape[-1]
    partials = [_sequential(terms[..., s : s + block_size], precision) for s in range(0, n, block_size)]
    acc = partials[0]
    for partial in partials[1:]:
        acc = quantize_array(acc + partial, precision)
    return acc


def reduce_axis(terms: np.ndarray, order: ReductionOrder, precision: PrecisionMode) -> np.ndarray:
    """Reduce the last axis of ``terms`` in the given order.

    Operands are rounded to ``precision`` first and every partial sum after
    each addition. An empty last axis reduces to 0.0.
    """
    terms = quantize_array(np.asarray(terms, dtype=np.float64), precision)
    if terms.shape[-1] == 0:
        return np.zeros(terms.shape[:-1], dtype=np.float64)
    if order.kind is ReductionKind.SEQUENTIAL:
        return _sequential(terms, precision)
    if order.kind is ReductionKind.PAIRWISE_TREE:
        return _pairwise_tree(terms, precision)
    return _blocked(terms, order.block_size, precision)


def tiled_reduce(terms: np.ndarray, profile: ExecutionProfile) -> np.ndarray:
    """Reduce the last axis tile by tile, then fold the tile partials left to right.

    Tile boundaries are multiples of ``profile.tile`` counted from index 0 of
    the reduction axis; they never depend on the leading (batch) axes.
    """
    n = terms.shape[-1]
    if n == 0:
        return np.zeros(terms.shape[:-1], dtype=np.float64)
    acc = None
    for start in range(0, n, profile.tile):
        partial = reduce_axis(terms[..., start : start + profile.tile], profile.reduction, profile.accum)
        acc = partial if acc is None else quantize_array(acc + partial, profile.accum)
    return acc


def det_sum(
    values: Union[Sequence[float], np.ndarray],
    order: ReductionOrder,
    precision: PrecisionMode,
) -> float:
    """Deterministically sum ``values`` in exactly the order requested.

    Args:
        values: Finite reals.
        order: sequential (left fold), pairwise_tree (balanced tree, odd tail
            promoted) or blocked (left fold inside blocks, then over block partials).
        precision: Rounding applied to operands and to every partial.

    Returns:
        The reduced value; 0.0 for an empty sequence.

    Raises:
        NonFiniteInputError: if any value is NaN or infinite.
    """
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    check_finite(arr)
    return float(reduce_axis(arr, order, precision))


def fold_sum(values: Union[Sequence[float], np.ndarray]) -> float:
    """Left-to-right float64 sum; the fixed-order reduction used by loss and metric code."""
    return det_sum(values, ReductionOrder.sequential(), PrecisionMode.full64())


def prefix_sums(values: Union[Sequence[float], np.ndarray]) -> np.ndarray:
    """Running left-to-right float64 sums of a 1-D sequence (an explicit CDF)."""
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    out = np.empty_like(arr)
    acc = 0.0
    for k in range(arr.size):
        acc = acc + float(arr[k])
        out[k] = acc
    return out
