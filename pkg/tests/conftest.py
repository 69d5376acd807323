"""Pytest configuration and fixtures for timsim tests."""

import numpy as np
import pytest

from src.kernels import EXACT
from src.policy import PolicyConfig, init_params
from src.rlcore import AdvMode, compute_advantages
from src.rollout import assign_advantages, generate_batch, recompute_old, refresh_current
from src.tasks import TaskSpec, gen_prompts
from src.trainer import TrainConfig


@pytest.fixture(scope="session")
def small_policy() -> PolicyConfig:
    """A policy small enough that every test runs in milliseconds."""
    return PolicyConfig(vocab_size=12, context_window=5, embed_dim=6, hidden_dim=10)


@pytest.fixture(scope="session")
def small_task() -> TaskSpec:
    return TaskSpec(prompt_len=3, target_len=2, alphabet_size=5)


@pytest.fixture
def params(small_policy):
    """Fresh parameters; tests may mutate them."""
    return init_params(small_policy, seed=3)


@pytest.fixture
def prompts(small_policy, small_task):
    return gen_prompts(
        small_task, 4, seed=11, window=small_policy.context_window, vocab_size=small_policy.vocab_size
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def make_batch(params, prompts, small_task, small_policy):
    """Build a fully populated batch: sampled, recomputed, refreshed, with GRPO advantages.

    ``rollout`` and ``train`` choose the profiles; ``shift`` moves the current
    parameters away from theta_old so ratios differ from 1.
    """

    def build(rollout=EXACT, train=EXACT, group_size=4, seed=5, shift=0.0):
        batch = generate_batch(params, prompts, group_size, rollout, seed, small_task.max_len)
        batch = recompute_old(params, batch, train, small_policy.rmsnorm_eps)
        current = params.copy()
        current.b2 = current.b2 + shift * np.linspace(-1.0, 1.0, current.b2.size)
        batch = refresh_current(current, batch, train, small_policy.rmsnorm_eps)
        advantages = compute_advantages(batch.rewards, AdvMode.GRPO_GROUP, group_size)
        return assign_advantages(batch, advantages)

    return build


@pytest.fixture
def tiny_train_config(small_policy):
    """Keyword arguments for a TrainConfig that finishes in well under a second per step."""

    def build(**overrides) -> TrainConfig:
        fields = dict(
            policy=small_policy,
            task=TaskSpec(prompt_len=3, target_len=1, alphabet_size=4),
            global_batch=16,
            mini_batch=8,
            group_size=4,
            steps=3,
            eval_every=2,
            eval_prompts=8,
            lr=0.01,
        )
        fields.update(overrides)
        return TrainConfig(**fields)

    return build
