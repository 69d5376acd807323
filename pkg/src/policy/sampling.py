"""Ancestral sampling and greedy decoding.

Randomness comes from counter-based Philox streams keyed by
``(seed, prompt_id, group_index)``; each trajectory draws exactly one uniform
per emitted token, so results do not depend on batching or scheduling.
"""

from typing import List, NamedTuple, Sequence

import numpy as np

from src.kernels import ExecutionProfile, log_softmax_bi, prefix_sums
from src.policy.model import EOS_ID, PolicyParams, forward_batch, last_window


class SampledResponse(NamedTuple):
    tokens: List[int]
    logp_rollout: np.ndarray
    top1: List[int]


def rng_stream(seed: int, prompt_id: int, group_index: int) -> np.random.Generator:
    """Independent counter-based stream for one trajectory."""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence([int(seed), int(prompt_id), int(group_index)]))
    )


def _draw(logp_sampling: np.ndarray, u: float) -> int:
    """Inverse-CDF draw over an explicit probability vector."""
    cdf = prefix_sums(np.exp(logp_sampling))
    idx = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    return min(idx, cdf.size - 1)


def sample_batch(
    params: PolicyParams,
    prompts: Sequence[Sequence[int]],
    rngs: Sequence[np.random.Generator],
    profile: ExecutionProfile,
    max_len: int,
    temperature: float = 1.0,
    rmsnorm_eps: float = 1e-6,
) -> List[SampledResponse]:
    """Sample one response per (prompt, rng) pair, step-synchronously.

    All still-active trajectories are advanced together through one batched
    forward per position. The kernels are batch-invariant, so each result is
    bitwise equal to :func:`sample_response` on the same prompt and stream.

    ``logp_rollout`` is always the temperature-1 log-probability of the emitted
    token; ``temperature`` only reshapes the sampling distribution.
    """
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    if len(prompts) != len(rngs):
        raise ValueError(f"{len(prompts)} prompts but {len(rngs)} rng streams")

    window = params.w1.shape[0] // params.embedding.shape[1]
    sequences = [list(p) for p in prompts]
    tokens: List[List[int]] = [[] for _ in prompts]
    logps: List[List[float]] = [[] for _ in prompts]
    top1: List[List[int]] = [[] for _ in prompts]
    active = list(range(len(prompts)))

    for _ in range(max_len):
        if not active:
            break
        contexts = np.stack([last_window(sequences[i], window) for i in active])
        logits = forward_batch(params, contexts, profile, rmsnorm_eps)
        logp = log_softmax_bi(logits, profile)
        if temperature == 1.0:
            logp_sampling = logp
        else:
            logp_sampling = log_softmax_bi(profile.round_activations(logits / temperature), profile)

        still_active = []
        for row, i in enumerate(active):
            tok = _draw(logp_sampling[row], float(rngs[i].random()))
            sequences[i].append(tok)
            tokens[i].append(tok)
            logps[i].append(float(logp[row, tok]))
            top1[i].append(int(np.argmax(logits[row])))
            if tok != EOS_ID:
                still_active.append(i)
        active = still_active

    return [
        SampledResponse(tokens[i], np.asarray(logps[i], dtype=np.float64), top1[i])
        for i in range(len(prompts))
    ]


def sample_response(
    params: PolicyParams,
    prompt: Sequence[int],
    profile: ExecutionProfile,
    rng: np.random.Generator,
    max_len: int,
    temperature: float = 1.0,
    rmsnorm_eps: float = 1e-6,
):
    """Sample a response until EOS or ``max_len`` tokens.

    Returns:
        ``(tokens, logp_rollout)``.
    """
    sampled = sample_batch(params, [prompt], [rng], profile, max_len, temperature, rmsnorm_eps)[0]
    return sampled.tokens, sampled.logp_rollout


def greedy_batch(
    params: PolicyParams,
    prompts: Sequence[Sequence[int]],
    profile: ExecutionProfile,
    max_len: int,
    rmsnorm_eps: float = 1e-6,
) -> List[List[int]]:
    """Argmax decoding (first index on ties) for many prompts."""
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    window = params.w1.shape[0] // params.embedding.shape[1]
    sequences = [list(p) for p in prompts]
    outputs: List[List[int]] = [[] for _ in prompts]
    active = list(range(len(prompts)))
    for _ in range(max_len):
        if not active:
            break
        contexts = np.stack([last_window(sequences[i], window) for i in active])
        choice = np.argmax(forward_batch(params, contexts, profile, rmsnorm_eps), axis=1)
        still_active = []
        for row, i in enumerate(active):
            tok = int(choice[row])
            sequences[i].append(tok)
            outputs[i].append(tok)
            if tok != EOS_ID:
                still_active.append(i)
        active = still_active
    return outputs


def greedy_decode(
    params: PolicyParams,
    prompt: Sequence[int],
    profile: ExecutionProfile,
    max_len: int,
    rmsnorm_eps: float = 1e-6,
) -> List[int]:
    return greedy_batch(params, [prompt], profile, max_len, rmsnorm_eps)[0]
