"""Rollout generation and trainer-side log-probability passes.

This is where the two execution paths meet: responses are sampled under the
rollout profile and re-evaluated under the train profile, and any difference
between the two is training-inference mismatch.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Sequence, Tuple

import numpy as np

from src.errors import FingerprintMismatchError
from src.kernels import ExecutionProfile
from src.policy import PolicyParams, rng_stream, sample_batch
from src.policy.model import evaluate_sequences
from src.rollout.records import TokenRecord, Trajectory, TrajectoryBatch
from src.tasks import Prompt, score

logger = logging.getLogger(__name__)


def _chunks(n: int, parts: int) -> List[Tuple[int, int]]:
    """Split ``range(n)`` into at most ``parts`` contiguous, near-equal slices."""
    parts = max(1, min(parts, n))
    bounds = [round(i * n / parts) for i in range(parts + 1)]
    return [(bounds[i], bounds[i + 1]) for i in range(parts) if bounds[i] < bounds[i + 1]]


def generate_batch(
    params_old: PolicyParams,
    prompts: Sequence[Prompt],
    group_size: int,
    rollout_profile: ExecutionProfile,
    rng_seed: int,
    max_len: int,
    temperature: float = 1.0,
    rmsnorm_eps: float = 1e-6,
    workers: int = 1,
) -> TrajectoryBatch:
    """Sample ``group_size`` responses per prompt under the rollout profile.

    Each trajectory draws from its own stream keyed by
    ``(rng_seed, prompt.id, g)``. Work is split into contiguous chunks that run
    in a thread pool and are merged back in ``(prompt_id, g)`` order, so the
    batch does not depend on ``workers``.

    Returns:
        A batch with ``logp_rollout`` and frozen rewards filled in.
    """
    if group_size < 1:
        raise ValueError(f"group_size must be >= 1, got {group_size}")

    jobs = [(prompt, g) for prompt in prompts for g in range(group_size)]

    def run_chunk(bounds: Tuple[int, int]):
        part = jobs[bounds[0] : bounds[1]]
        return sample_batch(
            params_old,
            [p.tokens for p, _ in part],
            [rng_stream(rng_seed, p.id, g) for p, g in part],
            rollout_profile,
            max_len,
            temperature,
            rmsnorm_eps,
        )

    chunks = _chunks(len(jobs), workers)
    if len(chunks) <= 1:
        sampled = [s for bounds in chunks for s in run_chunk(bounds)]
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            sampled = [s for part in pool.map(run_chunk, chunks) for s in part]

    trajectories = []
    for (prompt, g), sample in zip(jobs, sampled):
        records = [
            TokenRecord(token=int(tok), logp_rollout=float(lp), rollout_top1=int(top))
            for tok, lp, top in zip(sample.tokens, sample.logp_rollout, sample.top1)
        ]
        trajectories.append(
            Trajectory(
                prompt_id=prompt.id,
                group_index=g,
                prompt=tuple(prompt.tokens),
                tokens=records,
                reward=score(prompt, sample.tokens),
            )
        )

    logger.debug(
        f"Generated {len(trajectories)} trajectories ({len(prompts)} prompts x G={group_size}) "
        f"with {len(chunks)} worker chunk(s)"
    )
    return TrajectoryBatch(
        trajectories=trajectories,
        params_old_fingerprint=params_old.fingerprint(),
        rollout_profile=rollout_profile.describe(),
    )


def _evaluate(params: PolicyParams, batch: TrajectoryBatch, profile: ExecutionProfile, eps: float):
    pairs = [(t.prompt, t.response_tokens) for t in batch.trajectories]
    return evaluate_sequences(params, pairs, profile, eps)


def recompute_old(
    params_old: PolicyParams,
    batch: TrajectoryBatch,
    train_profile: ExecutionProfile,
    rmsnorm_eps: float = 1e-6,
) -> TrajectoryBatch:
    """Fill ``logp_old_train`` by re-evaluating every sampled token under the train profile.

    Raises:
        FingerprintMismatchError: if ``params_old`` is not the snapshot that produced the batch.
    """
    fingerprint = params_old.fingerprint()
    if fingerprint != batch.params_old_fingerprint:
        raise FingerprintMismatchError(
            f"batch was sampled from {batch.params_old_fingerprint[:12]}, "
            f"got parameters {fingerprint[:12]}"
        )
    updated = [
        traj.with_values(logp_old_train=logp, train_top1=top1)
        for traj, (logp, top1) in zip(batch.trajectories, _evaluate(params_old, batch, train_profile, rmsnorm_eps))
    ]
    out = batch.with_trajectories(updated)
    out.train_profile = train_profile.describe()
    return out


def refresh_current(
    params: PolicyParams,
    batch: TrajectoryBatch,
    train_profile: ExecutionProfile,
    rmsnorm_eps: float = 1e-6,
) -> TrajectoryBatch:
    """Fill ``logp_cur`` for the current parameters under the train profile."""
    updated = [
        traj.with_values(logp_cur=logp)
        for traj, (logp, _) in zip(batch.trajectories, _evaluate(params, batch, train_profile, rmsnorm_eps))
    ]
    out = batch.with_trajectories(updated)
    out.train_profile = train_profile.describe()
    return out


def assign_advantages(batch: TrajectoryBatch, advantages: Sequence[float]) -> TrajectoryBatch:
    """Broadcast one advantage per trajectory to each of its tokens."""
    if len(advantages) != len(batch):
        raise ValueError(f"{len(advantages)} advantages for {len(batch)} trajectories")
    return batch.with_trajectories(
        [
            traj.with_values(advantage=np.full(len(traj), float(a)))
            for traj, a in zip(batch.trajectories, advantages)
        ]
    )
