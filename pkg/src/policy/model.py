"""Fixed-window MLP policy over a small vocabulary.

The forward path is

    concat(embedding[context]) -> matmul_bi -> +b1 -> tanh -> rmsnorm_bi -> matmul_bi -> +b2

with every reduction and rounding taken from the ExecutionProfile. The same
parameters evaluated under two profiles play the rollout engine and the
training engine.
"""

import hashlib
import logging
from dataclasses import dataclass, fields
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.errors import ShapeMismatchError, TokenRangeError
from src.kernels import (
    ExecutionProfile,
    fold_sum,
    log_softmax_bi,
    matmul_bi,
    quantize_array,
    rmsnorm_bi,
)

logger = logging.getLogger(__name__)

# Reserved token ids
BOS_ID = 0
EOS_ID = 1
PAD_ID = 2
FIRST_CONTENT_ID = 3


class PolicyConfig(BaseModel):
    """Policy dimensions."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    vocab_size: int = Field(32, ge=FIRST_CONTENT_ID + 1, description="Includes BOS/EOS/PAD")
    context_window: int = Field(8, ge=1, description="Tokens visible to the policy (k)")
    embed_dim: int = Field(16, ge=1)
    hidden_dim: int = Field(32, ge=1)
    rmsnorm_eps: float = Field(1e-6, gt=0)

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        """Expected array shape for each parameter tensor."""
        k, e, h, v = self.context_window, self.embed_dim, self.hidden_dim, self.vocab_size
        return {
            "embedding": (v, e),
            "w1": (k * e, h),
            "b1": (h,),
            "gamma": (h,),
            "w2": (h, v),
            "b2": (v,),
        }


@dataclass
class ParamTensors:
    """Named float64 tensors shaped like the policy parameters."""

    embedding: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    gamma: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def names(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def zeros(cls, config: PolicyConfig):
        return cls(**{name: np.zeros(shape) for name, shape in config.shapes().items()})

    def items(self) -> Iterator[Tuple[str, np.ndarray]]:
        for name in self.names():
            yield name, getattr(self, name)

    def as_dict(self) -> Dict[str, np.ndarray]:
        return dict(self.items())

    def copy(self):
        return type(self)(**{name: np.array(arr, dtype=np.float64, copy=True) for name, arr in self.items()})

    def flat(self) -> np.ndarray:
        """All entries concatenated in field order."""
        return np.concatenate([arr.reshape(-1) for _, arr in self.items()])

    def all_finite(self) -> bool:
        return all(bool(np.all(np.isfinite(arr))) for _, arr in self.items())

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(arr))) if arr.size else 0.0 for _, arr in self.items())

    def check_shapes(self, config: PolicyConfig) -> None:
        for name, shape in config.shapes().items():
            actual = getattr(self, name).shape
            if actual != shape:
                raise ShapeMismatchError(f"{name} has shape {actual}, expected {shape}")


@dataclass
class PolicyParams(ParamTensors):
    """Policy weights (theta, or theta_old once snapshotted)."""

    def fingerprint(self) -> str:
        """SHA-256 over names, shapes and raw float64 bytes."""
        digest = hashlib.sha256()
        for name, arr in self.items():
            arr = np.ascontiguousarray(arr, dtype=np.float64)
            digest.update(name.encode())
            digest.update(str(arr.shape).encode())
            digest.update(arr.tobytes())
        return digest.hexdigest()


@dataclass
class Gradient(ParamTensors):
    """Gradient with the same shape family as PolicyParams."""

    def norm(self) -> float:
        """L2 norm with a fixed left-to-right reduction."""
        flat = self.flat()
        return float(np.sqrt(fold_sum(flat * flat)))

    def scaled(self, factor: float) -> "Gradient":
        return Gradient(**{name: arr * factor for name, arr in self.items()})


def init_params(config: PolicyConfig, seed: int) -> PolicyParams:
    """Scaled-uniform initialisation; gamma = 1, biases = 0.

    Weights are drawn from ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))`` (embeddings
    from ``U(-1, 1)``) in a fixed order from a Philox stream keyed by ``seed``.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0])))
    shapes = config.shapes()

    def uniform(name: str, fan_in: int) -> np.ndarray:
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shapes[name])

    return PolicyParams(
        embedding=uniform("embedding", 1),
        w1=uniform("w1", config.context_window * config.embed_dim),
        b1=np.zeros(shapes["b1"]),
        gamma=np.ones(shapes["gamma"]),
        w2=uniform("w2", config.hidden_dim),
        b2=np.zeros(shapes["b2"]),
    )


@dataclass
class ForwardCache:
    """Activations kept for backprop."""

    contexts: np.ndarray
    x: np.ndarray
    h: np.ndarray
    z: np.ndarray
    logits: np.ndarray


def check_tokens(tokens: np.ndarray, vocab_size: int, what: str = "token") -> None:
    """Raise TokenRangeError naming the first out-of-range position."""
    bad = (tokens < 0) | (tokens >= vocab_size)
    if np.any(bad):
        pos = tuple(int(i) for i in np.argwhere(bad)[0])
        raise TokenRangeError(
            f"{what} {int(tokens[pos])} at position {pos} is outside [0, {vocab_size})"
        )


def context_windows(prompt: Sequence[int], response: Sequence[int], window: int) -> np.ndarray:
    """Windows s_t over ``prompt + response[:t]`` for every response position t.

    Each window holds the last ``window`` tokens, left-padded with PAD.
    """
    seq = np.concatenate(
        [np.full(window, PAD_ID, dtype=np.int64), np.asarray(prompt, dtype=np.int64),
         np.asarray(response, dtype=np.int64)]
    )
    start = window + len(prompt)
    rows = [seq[start + t - window : start + t] for t in range(len(response))]
    if not rows:
        return np.zeros((0, window), dtype=np.int64)
    return np.stack(rows)


def last_window(sequence: Sequence[int], window: int) -> np.ndarray:
    """The window the policy sees after ``sequence``."""
    seq = list(sequence)[-window:]
    return np.asarray([PAD_ID] * (window - len(seq)) + seq, dtype=np.int64)


def _affine(
    x: np.ndarray, w: np.ndarray, b: np.ndarray, profile: ExecutionProfile
) -> np.ndarray:
    out = quantize_array(matmul_bi(x, w, profile) + quantize_array(b, profile.accum)[None, :], profile.accum)
    return profile.round_activations(out)


def forward_batch(
    params: PolicyParams,
    contexts: np.ndarray,
    profile: ExecutionProfile,
    rmsnorm_eps: float = 1e-6,
    keep_cache: bool = False,
):
    """Logits for a batch of context windows.

    Args:
        params: Policy weights.
        contexts: Integer array ``(N, k)``.
        profile: Execution profile for every kernel.
        rmsnorm_eps: RMSNorm epsilon.
        keep_cache: Also return the activations needed for backprop.

    Returns:
        ``(N, vocab_size)`` logits, or ``(logits, ForwardCache)`` when ``keep_cache``.
    """
    contexts = np.asarray(contexts, dtype=np.int64)
    vocab_size, embed_dim = params.embedding.shape
    if contexts.ndim != 2 or contexts.shape[1] * embed_dim != params.w1.shape[0]:
        raise ShapeMismatchError(
            f"contexts of shape {contexts.shape} do not fit w1 of shape {params.w1.shape}"
        )
    check_tokens(contexts, vocab_size, "context token")

    x = profile.round_activations(params.embedding[contexts].reshape(contexts.shape[0], -1))
    pre = _affine(x, params.w1, params.b1, profile)
    h = profile.round_activations(np.tanh(pre))
    z = rmsnorm_bi(h, params.gamma, rmsnorm_eps, profile)
    logits = _affine(z, params.w2, params.b2, profile)
    if keep_cache:
        return logits, ForwardCache(contexts=contexts, x=x, h=h, z=z, logits=logits)
    return logits


def forward_logits(
    params: PolicyParams,
    context: Sequence[int],
    profile: ExecutionProfile,
    rmsnorm_eps: float = 1e-6,
) -> np.ndarray:
    """Logits for one context; shorter contexts are left-padded with PAD."""
    window = params.w1.shape[0] // params.embedding.shape[1]
    context = list(context)
    if len(context) > window:
        raise ShapeMismatchError(f"context of length {len(context)} exceeds window {window}")
    return forward_batch(params, last_window(context, window)[None, :], profile, rmsnorm_eps)[0]


def batch_logprobs(
    params: PolicyParams,
    sequences: Sequence[Tuple[Sequence[int], Sequence[int]]],
    profile: ExecutionProfile,
    rmsnorm_eps: float = 1e-6,
) -> List[np.ndarray]:
    """Per-token log-probabilities for many (prompt, response) pairs in one forward pass.

    Because every kernel is batch-invariant this is bitwise equal to calling
    :func:`sequence_logprobs` once per pair.
    """
    return [logp for logp, _ in evaluate_sequences(params, sequences, profile, rmsnorm_eps)]


def evaluate_sequences(
    params: PolicyParams,
    sequences: Sequence[Tuple[Sequence[int], Sequence[int]]],
    profile: ExecutionProfile,
    rmsnorm_eps: float = 1e-6,
) -> List[Tuple[np.ndarray, np.ndarray]]:
    """``(logprobs, argmax tokens)`` at every response position of every pair."""
    vocab_size, embed_dim = params.embedding.shape
    window = params.w1.shape[0] // embed_dim
    blocks, targets, lengths = [], [], []
    for prompt, response in sequences:
        response = np.asarray(response, dtype=np.int64)
        if response.size == 0:
            raise ValueError("response must contain at least one token")
        check_tokens(response, vocab_size, "response token")
        blocks.append(context_windows(prompt, response, window))
        targets.append(response)
        lengths.append(response.size)
    if not blocks:
        return []

    contexts = np.concatenate(blocks)
    logits = forward_batch(params, contexts, profile, rmsnorm_eps)
    logp = log_softmax_bi(logits, profile)
    picked = logp[np.arange(contexts.shape[0]), np.concatenate(targets)]
    top1 = np.argmax(logits, axis=1)
    bounds = np.cumsum([0] + lengths)
    return [
        (picked[bounds[i] : bounds[i + 1]], top1[bounds[i] : bounds[i + 1]])
        for i in range(len(lengths))
    ]


def sequence_logprobs(
    params: PolicyParams,
    prompt: Sequence[int],
    response: Sequence[int],
    profile: ExecutionProfile,
    rmsnorm_eps: float = 1e-6,
) -> np.ndarray:
    """``log pi(a_t | s_t)`` for every response token under ``profile``.

    Raises:
        ValueError: if ``response`` is empty.
        TokenRangeError: if any token is outside the vocabulary.
    """
    return batch_logprobs(params, [(prompt, response)], profile, rmsnorm_eps)[0]


def surrogate_rows(
    trajectories: Sequence, coeffs: Optional[Sequence[np.ndarray]] = None
) -> Tuple[List[Tuple[Sequence[int], np.ndarray]], Optional[np.ndarray]]:
    """(prompt, response) pairs of a batch, plus flattened coefficients when given."""
    pairs = [(traj.prompt, traj.response_tokens) for traj in trajectories]
    if coeffs is None:
        return pairs, None
    if len(coeffs) != len(pairs):
        raise ShapeMismatchError(
            f"got coefficients for {len(coeffs)} trajectories, batch has {len(pairs)}"
        )
    flat = []
    for i, ((_, response), c) in enumerate(zip(pairs, coeffs)):
        c = np.asarray(c, dtype=np.float64)
        if c.shape != (len(response),):
            raise ShapeMismatchError(
                f"trajectory {i}: coefficients of shape {c.shape} for {len(response)} tokens"
            )
        flat.append(c)
    return pairs, np.concatenate(flat) if flat else np.zeros(0)
