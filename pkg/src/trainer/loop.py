"""Training loop: snapshot, roll out, recompute, mini-steps, metrics.

One call of :func:`train_step` consumes one rollout batch. REINFORCE takes a
single full-batch step; the GRPO family takes ``global_batch / mini_batch``
mini-steps over contiguous slices of the batch under a fixed theta_old.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from tqdm import tqdm

from src.config import config as settings
from src.errors import NonFiniteInputError, PrecisionOverflowError, RatioRangeError
from src.kernels import EXACT, ExecutionProfile, fold_sum
from src.policy import (
    PolicyConfig,
    PolicyParams,
    grad_surrogate,
    greedy_batch,
    init_params,
    save_checkpoint,
)
from src.rlcore import AdvMode, LossConfig, LossVariant, assemble_loss, compute_advantages
from src.rollout import (
    TraceWriter,
    TrajectoryBatch,
    assign_advantages,
    delta_stats,
    generate_batch,
    recompute_old,
    refresh_current,
)
from src.tasks import Prompt, TaskSpec, gen_prompts, score
from src.trainer.metrics_io import METRICS_COLUMNS, MetricsWriter, header_comment
from src.trainer.optim import OptimizerConfig, build_optimizer

logger = logging.getLogger(__name__)

# Seed-derivation keys
_TRAIN_PROMPTS = 1
_ROLLOUT = 2
_EVAL_PROMPTS = 3

_NUMERIC_FAILURES = (NonFiniteInputError, PrecisionOverflowError, RatioRangeError, FloatingPointError)


def derive_seed(seed: int, *keys: int) -> int:
    """Independent 32-bit seed for ``(seed, *keys)``."""
    return int(np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1)[0])


class TrainConfig(BaseModel):
    """Complete description of one experiment. Equal configs give equal runs."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    policy: PolicyConfig = Field(default_factory=PolicyConfig)
    task: TaskSpec = Field(default_factory=TaskSpec)
    loss: LossConfig = Field(default_factory=LossConfig)
    rollout_profile: ExecutionProfile = Field(default_factory=lambda: EXACT)
    train_profile: ExecutionProfile = Field(default_factory=lambda: EXACT)
    global_batch: int = Field(64, ge=1, description="Trajectories per rollout batch")
    mini_batch: int = Field(16, ge=1, description="Trajectories per mini-step")
    group_size: Optional[int] = Field(None, ge=1, description="8 for GRPO, 1 for REINFORCE by default")
    lr: float = Field(3e-3, ge=0)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    steps: int = Field(200, ge=0)
    seed: int = Field(0, ge=0)
    eval_every: int = Field(50, ge=1)
    eval_prompts: int = Field(64, ge=1, description="Held-out prompts for greedy evaluation")
    temperature: float = Field(1.0, gt=0)
    max_len: Optional[int] = Field(None, ge=1, description="Defaults to target_len + 1")
    divergence_threshold: float = Field(1e10, gt=0)

    @model_validator(mode="after")
    def _check_batch_structure(self) -> "TrainConfig":
        if self.global_batch % self.mini_batch:
            raise ValueError(
                f"mini_batch {self.mini_batch} does not divide global_batch {self.global_batch}"
            )
        g = self.group
        if self.global_batch % g:
            raise ValueError(f"group_size {g} does not divide global_batch {self.global_batch}")
        if self.loss.effective_adv_mode is AdvMode.GRPO_GROUP and g < 2:
            raise ValueError("grpo_group advantages need group_size >= 2")
        if self.loss.effective_adv_mode is AdvMode.BATCH_WHITEN and self.global_batch < 2:
            raise ValueError("batch_whiten advantages need global_batch >= 2")
        self.task.check_feasible(self.policy.context_window, self.policy.vocab_size)
        return self

    @property
    def group(self) -> int:
        if self.group_size is not None:
            return self.group_size
        return 1 if self.loss.variant is LossVariant.REINFORCE else 8

    @property
    def response_budget(self) -> int:
        return self.max_len or self.task.max_len

    @property
    def prompts_per_batch(self) -> int:
        return self.global_batch // self.group

    def mini_batches(self) -> List[List[int]]:
        """Contiguous trajectory slices, one per mini-step."""
        if self.loss.variant is LossVariant.REINFORCE:
            return [list(range(self.global_batch))]
        return [
            list(range(start, start + self.mini_batch))
            for start in range(0, self.global_batch, self.mini_batch)
        ]


class MetricsRecord(BaseModel):
    """One row of the metrics file. NaN marks a quantity not measured at this step."""

    step: int
    train_reward: float = math.nan
    eval_reward: float = math.nan
    loss: float = math.nan
    grad_norm: float = math.nan
    delta_mean_abs: float = math.nan
    delta_max_abs: float = math.nan
    k1_mean: float = math.nan
    k3_mean: float = math.nan
    clip_fraction: float = math.nan
    rejection_rate: float = math.nan
    tis_truncation_rate: float = math.nan
    diverged: bool = False
    top1_flip_rate: float = math.nan
    max_grad_norm: float = math.nan
    mini_steps: int = 0
    contribution_histogram: Optional[Dict[str, List]] = None

    def to_row(self) -> Dict[str, object]:
        return {name: getattr(self, name) for name in METRICS_COLUMNS}


@dataclass
class TrainState:
    params: PolicyParams
    optimizer: object
    step: int = 0
    diverged: bool = False
    eval_set: List[Prompt] = field(default_factory=list)


def snapshot_old(params: PolicyParams) -> Tuple[PolicyParams, str]:
    """Deep copy of ``params`` and its content fingerprint."""
    old = params.copy()
    return old, old.fingerprint()


def init_state(config: TrainConfig) -> TrainState:
    eval_set = gen_prompts(
        config.task,
        config.eval_prompts,
        derive_seed(config.seed, 0, _EVAL_PROMPTS),
        window=config.policy.context_window,
        vocab_size=config.policy.vocab_size,
    )
    return TrainState(
        params=init_params(config.policy, config.seed),
        optimizer=build_optimizer(config.optimizer, config.lr),
        eval_set=eval_set,
    )


def evaluate(params: PolicyParams, prompts: Sequence[Prompt], config: TrainConfig) -> float:
    """Mean greedy-decoding reward under the rollout profile."""
    responses = greedy_batch(
        params,
        [p.tokens for p in prompts],
        config.rollout_profile,
        config.response_budget,
        config.policy.rmsnorm_eps,
    )
    return fold_sum([score(p, r) for p, r in zip(prompts, responses)]) / len(prompts)


def _params_diverged(params: PolicyParams, threshold: float) -> bool:
    return not params.all_finite() or params.max_abs() > threshold


def train_step(
    state: TrainState,
    config: TrainConfig,
    workers: int = 1,
    trace: Optional[TraceWriter] = None,
) -> Tuple[TrainState, MetricsRecord]:
    """Run one rollout batch through the optimiser.

    Divergence (non-finite loss, gradient or parameters, a kernel rejecting a
    non-finite or overflowing value, or a parameter above the divergence
    threshold) is reported through the record's ``diverged`` flag.
    """
    step = state.step + 1
    eps = config.policy.rmsnorm_eps
    metrics: Dict[str, object] = {}
    losses: List[float] = []
    norms: List[float] = []
    consumed = []
    batch: Optional[TrajectoryBatch] = None
    diverged = False

    try:
        params_old, _ = snapshot_old(state.params)
        prompts = gen_prompts(
            config.task,
            config.prompts_per_batch,
            derive_seed(config.seed, step, _TRAIN_PROMPTS),
            window=config.policy.context_window,
            vocab_size=config.policy.vocab_size,
        )
        batch = generate_batch(
            params_old,
            prompts,
            config.group,
            config.rollout_profile,
            derive_seed(config.seed, step, _ROLLOUT),
            config.response_budget,
            config.temperature,
            eps,
            workers,
        )
        # always recomputed so mismatch stays observable in bypass runs
        batch = recompute_old(params_old, batch, config.train_profile, eps)
        deltas = delta_stats(batch)
        metrics.update(
            train_reward=fold_sum(batch.rewards) / len(batch),
            delta_mean_abs=deltas.mean_abs,
            delta_max_abs=deltas.max_abs,
            top1_flip_rate=deltas.top1_flip_rate,
        )
        if deltas.max_abs > 0:
            logger.debug(f"step {step}: mean|delta|={deltas.mean_abs:.3g} max|delta|={deltas.max_abs:.3g}")

        advantages = compute_advantages(batch.rewards, config.loss.effective_adv_mode, config.group)
        batch = assign_advantages(batch, advantages)

        for indices in config.mini_batches():
            mb = refresh_current(state.params, batch.select(indices), config.train_profile, eps)
            breakdown = assemble_loss(mb, config.loss)
            for traj, rejected in zip(mb.trajectories, breakdown.rejected):
                traj.rejected = rejected
            consumed.extend(mb.trajectories)

            _, grad = grad_surrogate(
                state.params, mb, breakdown.token_coeffs, config.train_profile, rmsnorm_eps=eps
            )
            norm = grad.norm()
            losses.append(breakdown.loss)
            norms.append(norm)
            if not (math.isfinite(breakdown.loss) and math.isfinite(norm)):
                diverged = True
                break
            state.optimizer.step(state.params, grad)
            if _params_diverged(state.params, config.divergence_threshold):
                diverged = True
                break
    except _NUMERIC_FAILURES as exc:
        logger.warning(f"step {step}: numeric failure {type(exc).__name__}: {exc}")
        diverged = True

    if losses:
        metrics.update(
            loss=fold_sum(losses) / len(losses),
            grad_norm=fold_sum(norms) / len(norms),
            max_grad_norm=max(norms),
        )

    if consumed and batch is not None:
        merged = batch.with_trajectories(consumed)
        try:
            summary = assemble_loss(merged, config.loss)
            metrics.update(
                k1_mean=summary.k1_mean,
                k3_mean=summary.k3_mean,
                clip_fraction=summary.clip_fraction,
                rejection_rate=summary.rejection_rate,
                tis_truncation_rate=summary.tis_truncation_rate,
                contribution_histogram=summary.contribution_histogram.as_dict(),
            )
        except (ValueError, FloatingPointError) as exc:
            logger.warning(f"step {step}: batch diagnostics unavailable ({exc})")
            diverged = True
        if trace is not None:
            trace.write_batch(step, merged)

    if not diverged and step % config.eval_every == 0:
        try:
            metrics["eval_reward"] = evaluate(state.params, state.eval_set, config)
        except _NUMERIC_FAILURES as exc:
            logger.warning(f"step {step}: evaluation failed ({exc})")
            diverged = True

    if diverged:
        logger.warning(f"[ERROR] Divergence flagged at step {step}")
    state.step = step
    state.diverged = diverged
    record = MetricsRecord(step=step, diverged=diverged, mini_steps=len(losses), **metrics)
    return state, record


@dataclass
class ExperimentResult:
    records: List[MetricsRecord]
    params: PolicyParams
    diverged: bool
    checkpoint_path: Optional[Path] = None


def run_experiment(
    config: TrainConfig,
    metrics_path: Optional[Union[str, Path]] = None,
    checkpoint_path: Optional[Union[str, Path]] = None,
    trace_path: Optional[Union[str, Path]] = None,
    manifest_hash: str = "",
    workers: int = 1,
    progress: Optional[bool] = None,
) -> ExperimentResult:
    """Run ``config.steps`` training steps with periodic greedy evaluation.

    Step 0 is an evaluation-only record. Records are streamed to
    ``metrics_path`` as they are produced; the run stops at the first
    divergence-flagged record.
    """
    progress = settings.PROGRESS if progress is None else progress
    state = init_state(config)

    writer = None
    if metrics_path is not None:
        writer = MetricsWriter(
            metrics_path,
            header_comment(
                manifest=manifest_hash or "none",
                optimizer=config.optimizer.describe(),
                lr=config.lr,
                variant=config.loss.variant.value,
            ),
        )
    trace = None
    if trace_path is not None:
        trace = TraceWriter(
            trace_path,
            {
                "manifest_hash": manifest_hash,
                "rollout_profile": config.rollout_profile.describe(),
                "train_profile": config.train_profile.describe(),
                "variant": config.loss.variant.value,
                "loss": config.loss.describe(),
            },
        )

    logger.info("=" * 60)
    logger.info(
        f"Training {config.loss.variant.value}: rollout={config.rollout_profile.describe()['name']} "
        f"train={config.train_profile.describe()['name']} steps={config.steps} seed={config.seed}"
    )
    logger.info("=" * 60)
    start = time.time()

    records = [MetricsRecord(step=0, eval_reward=evaluate(state.params, state.eval_set, config))]
    if writer:
        writer.append(records[0].to_row())

    try:
        for _ in tqdm(range(config.steps), desc="Training", disable=not progress):
            state, record = train_step(state, config, workers=workers, trace=trace)
            records.append(record)
            if writer:
                writer.append(record.to_row())
            if record.diverged:
                break
    finally:
        if trace is not None:
            trace.close()

    saved = None
    if checkpoint_path is not None:
        saved = save_checkpoint(checkpoint_path, state.params, config.policy)

    duration = time.time() - start
    status = "[ERROR] Run diverged" if state.diverged else "[OK] Run complete"
    logger.info(f"{status} after {state.step} steps in {duration:.2f}s")
    return ExperimentResult(records=records, params=state.params, diverged=state.diverged, checkpoint_path=saved)
