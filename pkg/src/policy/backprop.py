"""Analytic gradients of coefficient-weighted log-probability sums.

The surrogate is ``sum_t coeff_t * log pi(a_t | s_t)`` over every response
token of a batch. Coefficients are constants: each loss variant encodes its
stop-gradient structure in them. The forward pass runs under the caller's
profile; the backward pass always accumulates in full64 with the exact
profile's fixed order, and rounding is treated as the identity.
"""

import logging
from typing import Sequence, Tuple

import numpy as np

from src.kernels import EXACT, ExecutionProfile, fold_sum, log_softmax_bi, matmul_bi, tiled_reduce
from src.policy.model import (
    Gradient,
    PolicyParams,
    batch_logprobs,
    context_windows,
    forward_batch,
    surrogate_rows,
)

logger = logging.getLogger(__name__)

GRAD_PROFILE = EXACT


def _column_sums(rows: np.ndarray) -> np.ndarray:
    """Sum over the batch axis in trajectory order."""
    return tiled_reduce(np.ascontiguousarray(rows.T), GRAD_PROFILE)


def surrogate_value(
    params: PolicyParams,
    batch,
    coeffs: Sequence[np.ndarray],
    profile: ExecutionProfile,
    offset: float = 0.0,
    rmsnorm_eps: float = 1e-6,
) -> float:
    """Scalar ``sum coeff_t * logp_t + offset`` without the gradient."""
    pairs, flat = surrogate_rows(batch.trajectories, coeffs)
    if not pairs:
        return float(offset)
    logp = np.concatenate(batch_logprobs(params, pairs, profile, rmsnorm_eps))
    return fold_sum(flat * logp) + offset


def grad_surrogate(
    params: PolicyParams,
    batch,
    coeffs: Sequence[np.ndarray],
    profile: ExecutionProfile,
    offset: float = 0.0,
    rmsnorm_eps: float = 1e-6,
) -> Tuple[float, Gradient]:
    """Surrogate value and its gradient with respect to every parameter.

    Args:
        params: Current parameters.
        batch: Anything with ``trajectories`` exposing ``prompt`` and ``response_tokens``.
        coeffs: One coefficient array per trajectory, one entry per response token.
        profile: Forward execution profile.
        offset: Constant added to the scalar.
        rmsnorm_eps: RMSNorm epsilon of the policy.

    Returns:
        ``(scalar, Gradient)``.

    Raises:
        ShapeMismatchError: if coefficients do not match the batch tokens.
    """
    pairs, flat = surrogate_rows(batch.trajectories, coeffs)
    if not pairs:
        return float(offset), Gradient(**{n: np.zeros_like(a) for n, a in params.items()})

    vocab_size, embed_dim = params.embedding.shape
    window = params.w1.shape[0] // embed_dim
    contexts = np.concatenate([context_windows(p, r, window) for p, r in pairs])
    targets = np.concatenate([np.asarray(r, dtype=np.int64) for _, r in pairs])
    rows = np.arange(contexts.shape[0])

    logits, cache = forward_batch(params, contexts, profile, rmsnorm_eps, keep_cache=True)
    logp = log_softmax_bi(logits, profile)
    value = fold_sum(flat * logp[rows, targets]) + offset

    # d log p[a] / d logits = onehot(a) - softmax
    d_logits = -np.exp(logp)
    d_logits[rows, targets] += 1.0
    d_logits *= flat[:, None]

    z, h, x = cache.z, cache.h, cache.x
    d_w2 = matmul_bi(z.T, d_logits, GRAD_PROFILE)
    d_b2 = _column_sums(d_logits)
    d_z = matmul_bi(d_logits, params.w2.T, GRAD_PROFILE)

    # z = gamma * h * s with s = (mean(h^2) + eps)^-1/2
    n = h.shape[1]
    s = 1.0 / np.sqrt(tiled_reduce(h * h, GRAD_PROFILE) / n + rmsnorm_eps)
    d_gamma = _column_sums(d_z * h * s[:, None])
    g_dz = d_z * params.gamma[None, :]
    inner = tiled_reduce(g_dz * h, GRAD_PROFILE)
    d_h = g_dz * s[:, None] - h * (s**3 * inner / n)[:, None]

    d_pre = d_h * (1.0 - h * h)
    d_w1 = matmul_bi(x.T, d_pre, GRAD_PROFILE)
    d_b1 = _column_sums(d_pre)
    d_x = matmul_bi(d_pre, params.w1.T, GRAD_PROFILE).reshape(contexts.shape[0], window, embed_dim)

    d_embedding = np.zeros_like(params.embedding)
    # unbuffered scatter, applied in row order
    np.add.at(d_embedding, contexts, d_x)

    grad = Gradient(embedding=d_embedding, w1=d_w1, b1=d_b1, gamma=d_gamma, w2=d_w2, b2=d_b2)
    logger.debug(f"grad_surrogate: {contexts.shape[0]} tokens, value={value:.6g}")
    return float(value), grad
