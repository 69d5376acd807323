"""Importance ratios, KL estimators and the zero-centred contribution."""

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

import numpy as np

from src.errors import MissingFieldError, NonFiniteInputError, RatioRangeError
from src.kernels import fold_sum

ArrayLike = Union[float, np.ndarray]


class Estimator(str, Enum):
    K1 = "K1"
    K3 = "K3"


class SeqAgg(str, Enum):
    SUM = "sum"
    MEAN = "mean"


@dataclass
class RatioTriple:
    """Per-token ``(r_train, r_rollout, r_corr)``.

    r_train   = pi_theta / pi_train_old
    r_rollout = pi_theta / pi_rollout_old
    r_corr    = pi_train_old / pi_rollout_old
    """

    r_train: ArrayLike
    r_rollout: ArrayLike
    r_corr: ArrayLike


def _logprob(values: Optional[ArrayLike], name: str) -> np.ndarray:
    if values is None:
        raise MissingFieldError(f"ratio_triple needs {name}")
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInputError(f"{name} must be finite log-probabilities")
    if np.any(arr > 0):
        raise ValueError(f"{name} must be log-probabilities <= 0")
    return arr


def ratio_triple(
    logp_cur: Optional[ArrayLike],
    logp_old_train: Optional[ArrayLike],
    logp_old_rollout: Optional[ArrayLike],
) -> RatioTriple:
    """Exponentiated log-differences of the three token distributions.

    Raises:
        MissingFieldError: if any input is absent.
    """
    cur = _logprob(logp_cur, "logp_cur")
    old = _logprob(logp_old_train, "logp_old_train")
    rollout = _logprob(logp_old_rollout, "logp_rollout")
    triple = RatioTriple(
        r_train=np.exp(cur - old),
        r_rollout=np.exp(cur - rollout),
        r_corr=np.exp(old - rollout),
    )
    if np.ndim(cur) == 0:
        return RatioTriple(float(triple.r_train), float(triple.r_rollout), float(triple.r_corr))
    return triple


def _positive(r: ArrayLike, what: str) -> np.ndarray:
    arr = np.asarray(r, dtype=np.float64)
    if np.any(~(arr > 0)):
        raise RatioRangeError(f"{what} requires r > 0")
    return arr


def _out(arr: np.ndarray, like: ArrayLike) -> ArrayLike:
    return float(arr) if np.ndim(like) == 0 else arr


def k1(r: ArrayLike) -> ArrayLike:
    """K1(r) = -log r (signed)."""
    arr = _positive(r, "k1")
    return _out(-np.log(arr), r)


def k3(r: ArrayLike) -> ArrayLike:
    """K3(r) = (r - 1) - log r, clamped at 0 against round-off."""
    arr = _positive(r, "k3")
    return _out(np.maximum((arr - 1.0) - np.log(arr), 0.0), r)


def estimate(r: ArrayLike, estimator: Estimator) -> ArrayLike:
    return k1(r) if Estimator(estimator) is Estimator.K1 else k3(r)


def centered_contribution(r: ArrayLike, advantage: ArrayLike) -> ArrayLike:
    """C(r, A) = -(r - 1) * A; zero at r = 1 with the gradient of -rA."""
    value = -(np.asarray(r, dtype=np.float64) - 1.0) * np.asarray(advantage, dtype=np.float64)
    return float(value) if np.ndim(value) == 0 else value


def seq_score(q: ArrayLike, estimator: Estimator, agg: SeqAgg) -> float:
    """Aggregate token-wise mismatch into one sequence score.

    Raises:
        ValueError: if any q_t <= 0 or the sequence is empty.
    """
    arr = np.atleast_1d(_positive(q, "seq_score"))
    if arr.size == 0:
        raise ValueError("seq_score needs at least one token")
    total = fold_sum(np.atleast_1d(estimate(arr, estimator)))
    if SeqAgg(agg) is SeqAgg.MEAN:
        return total / arr.size
    return total
