"""Ratio, estimator, advantage and loss mathematics."""

from .ratios import (
    Estimator,
    RatioTriple,
    SeqAgg,
    centered_contribution,
    estimate,
    k1,
    k3,
    ratio_triple,
    seq_score,
)
from .advantages import AdvMode, adv_batch_whiten, adv_grpo, compute_advantages, group_rewards
from .losses import (
    PRESETS,
    ContributionHistogram,
    LossBreakdown,
    LossConfig,
    LossVariant,
    MaskSignal,
    assemble_loss,
    ppo_ratio_source,
    ppo_token_loss,
    ppo_token_terms,
    preset,
)

__all__ = [
    "Estimator",
    "RatioTriple",
    "SeqAgg",
    "centered_contribution",
    "estimate",
    "k1",
    "k3",
    "ratio_triple",
    "seq_score",
    "AdvMode",
    "adv_batch_whiten",
    "adv_grpo",
    "compute_advantages",
    "group_rewards",
    "PRESETS",
    "ContributionHistogram",
    "LossBreakdown",
    "LossConfig",
    "LossVariant",
    "MaskSignal",
    "assemble_loss",
    "ppo_ratio_source",
    "ppo_token_loss",
    "ppo_token_terms",
    "preset",
]
