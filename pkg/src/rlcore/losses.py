"""Clipped surrogates, correction objectives and loss assembly.

Every variant is reduced to per-token coefficients ``d loss / d log pi_theta``
with old log-probabilities, correction weights, clip-branch choice and
rejection masks held constant. The policy gradient is then
``grad_surrogate(params, batch, token_coeffs)``.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.errors import ConfigError, RatioRangeError
from src.kernels import fold_sum
from src.rlcore.advantages import AdvMode
from src.rlcore.ratios import (
    Estimator,
    SeqAgg,
    centered_contribution,
    k1,
    k3,
    ratio_triple,
    seq_score,
)
from src.rollout.records import TrajectoryBatch

logger = logging.getLogger(__name__)


class LossVariant(str, Enum):
    REINFORCE = "reinforce"
    GRPO_RECOMPUTE = "grpo_recompute"
    GRPO_BYPASS = "grpo_bypass"
    TIS = "tis"
    SRS = "srs"
    TIS_SRS = "tis_srs"


class MaskSignal(str, Enum):
    CORR_RATIO = "corr_ratio"
    PPO_RATIO = "ppo_ratio"


_MASKED = (LossVariant.SRS, LossVariant.TIS_SRS)
_TRUNCATED = (LossVariant.TIS, LossVariant.TIS_SRS)

# Which ratio each variant feeds into its clipped surrogate
_PPO_RATIO_SOURCE = {
    LossVariant.REINFORCE: "rollout",
    LossVariant.GRPO_RECOMPUTE: "train",
    LossVariant.GRPO_BYPASS: "rollout",
    LossVariant.TIS: "train",
    LossVariant.SRS: "rollout",
    LossVariant.TIS_SRS: "train",
}

_REQUIRED_FIELDS = {
    LossVariant.REINFORCE: ("logp_rollout", "logp_cur", "advantage"),
    LossVariant.GRPO_BYPASS: ("logp_rollout", "logp_cur", "advantage"),
    LossVariant.GRPO_RECOMPUTE: ("logp_rollout", "logp_old_train", "logp_cur", "advantage"),
    LossVariant.TIS: ("logp_rollout", "logp_old_train", "logp_cur", "advantage"),
    LossVariant.SRS: ("logp_rollout", "logp_old_train", "logp_cur", "advantage"),
    LossVariant.TIS_SRS: ("logp_rollout", "logp_old_train", "logp_cur", "advantage"),
}


def ppo_ratio_source(variant: LossVariant) -> str:
    """``train`` (r_train = pi_theta / pi_train_old) or ``rollout`` (pi_theta / pi_rollout_old)."""
    return _PPO_RATIO_SOURCE[LossVariant(variant)]


class LossConfig(BaseModel):
    """Objective selection and its thresholds."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    variant: LossVariant = LossVariant.GRPO_RECOMPUTE
    clip_eps: float = Field(0.2, gt=0)
    tau_tok: float = Field(2.0, gt=0, description="TIS truncation threshold")
    tau_seq: float = Field(0.001, gt=0, description="SRS rejection threshold")
    estimator: Estimator = Estimator.K3
    mask_signal: MaskSignal = MaskSignal.CORR_RATIO
    seq_agg: SeqAgg = SeqAgg.MEAN
    adv_mode: Optional[AdvMode] = Field(
        None, description="Defaults to batch_whiten for reinforce, grpo_group otherwise"
    )

    @model_validator(mode="after")
    def _check_variant_fields(self) -> "LossConfig":
        if self.mask_signal is not MaskSignal.CORR_RATIO and self.variant not in _MASKED:
            raise ValueError(f"mask_signal only applies to srs/tis_srs, not {self.variant.value}")
        if np.isnan(self.tau_tok) or np.isnan(self.tau_seq):
            raise ValueError("thresholds must be numbers")
        return self

    @property
    def effective_adv_mode(self) -> AdvMode:
        if self.adv_mode is not None:
            return self.adv_mode
        if self.variant is LossVariant.REINFORCE:
            return AdvMode.BATCH_WHITEN
        return AdvMode.GRPO_GROUP

    def describe(self) -> Dict[str, object]:
        """Plain dict with enum values, for trace metadata."""
        out = {k: (v.value if isinstance(v, Enum) else v) for k, v in self.model_dump().items()}
        out["adv_mode"] = self.effective_adv_mode.value
        return out

    @property
    def needs_recompute(self) -> bool:
        """Whether the loss itself reads logp_old_train."""
        return self.variant not in (LossVariant.REINFORCE, LossVariant.GRPO_BYPASS)


PRESETS: Dict[str, Dict[str, object]] = {
    "reinforce": {"variant": LossVariant.REINFORCE},
    "recompute": {"variant": LossVariant.GRPO_RECOMPUTE},
    "bypass": {"variant": LossVariant.GRPO_BYPASS},
    "tis": {"variant": LossVariant.TIS},
    "srs-k3-corr-ratio": {
        "variant": LossVariant.SRS,
        "estimator": Estimator.K3,
        "mask_signal": MaskSignal.CORR_RATIO,
    },
    "srs-k3-ppo-ratio": {
        "variant": LossVariant.SRS,
        "estimator": Estimator.K3,
        "mask_signal": MaskSignal.PPO_RATIO,
    },
    "tis-srs-k3-corr-ratio": {
        "variant": LossVariant.TIS_SRS,
        "estimator": Estimator.K3,
        "mask_signal": MaskSignal.CORR_RATIO,
    },
    "tis-srs-k1-corr-ratio": {
        "variant": LossVariant.TIS_SRS,
        "estimator": Estimator.K1,
        "mask_signal": MaskSignal.CORR_RATIO,
    },
}


def preset(name: str, **overrides) -> LossConfig:
    """LossConfig for a named configuration, with optional field overrides."""
    if name not in PRESETS:
        raise ConfigError(f"Unknown loss preset {name!r}; available: {sorted(PRESETS)}")
    return LossConfig(**{**PRESETS[name], **overrides})


def ppo_token_loss(r: float, advantage: float, eps: float) -> Tuple[float, bool]:
    """``-min(r*A, clip(r, 1-eps, 1+eps)*A)`` and whether the clipped branch is the strict minimiser.

    Raises:
        ValueError: if ``eps <= 0``.
        RatioRangeError: if ``r`` is not finite and positive (a ValueError too).
    """
    loss, clipped = ppo_token_terms(np.asarray([r]), np.asarray([advantage]), eps)
    return float(loss[0]), bool(clipped[0])


def ppo_token_terms(r: np.ndarray, advantage: np.ndarray, eps: float) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`ppo_token_loss`."""
    r = np.asarray(r, dtype=np.float64)
    advantage = np.asarray(advantage, dtype=np.float64)
    if eps <= 0:
        raise ValueError(f"clip eps must be > 0, got {eps}")
    if np.any(~(r > 0)) or not np.all(np.isfinite(r)):
        raise RatioRangeError("PPO ratio must be finite and > 0")
    unclipped = r * advantage
    clipped_value = np.clip(r, 1.0 - eps, 1.0 + eps) * advantage
    return -np.minimum(unclipped, clipped_value), clipped_value < unclipped


HIST_EDGES = np.array(
    [-1.0, -0.3, -0.1, -0.03, -0.01, -0.003, -0.001, 0.0, 0.001, 0.003, 0.01, 0.03, 0.1, 0.3, 1.0]
)


@dataclass
class ContributionHistogram:
    """Counts of C(r, A) per bin, split by the sign of A.

    Bin i covers ``[edges[i-1], edges[i])``; the first and last bins are open-ended.
    """

    edges: List[float]
    positive: List[int]
    negative: List[int]
    zero: List[int]

    @classmethod
    def build(cls, contribution: np.ndarray, advantage: np.ndarray) -> "ContributionHistogram":
        bins = np.searchsorted(HIST_EDGES, contribution, side="right")
        size = HIST_EDGES.size + 1

        def counts(mask: np.ndarray) -> List[int]:
            return [int(c) for c in np.bincount(bins[mask], minlength=size)]

        return cls(
            edges=[float(e) for e in HIST_EDGES],
            positive=counts(advantage > 0),
            negative=counts(advantage < 0),
            zero=counts(advantage == 0),
        )

    @property
    def total(self) -> int:
        return sum(self.positive) + sum(self.negative) + sum(self.zero)

    def as_dict(self) -> Dict[str, List]:
        return {"edges": self.edges, "positive": self.positive, "negative": self.negative, "zero": self.zero}


@dataclass
class LossBreakdown:
    loss: float
    token_coeffs: List[np.ndarray]
    clip_fraction: float
    rejection_rate: float
    tis_truncation_rate: float
    k1_mean: float
    k3_mean: float
    contribution_histogram: ContributionHistogram
    rejected: List[bool] = field(default_factory=list)
    estimator_means: Dict[str, Dict[str, float]] = field(default_factory=dict)
    contribution_histograms: Dict[str, ContributionHistogram] = field(default_factory=dict)
    kept: int = 0


def _token_mean(values: np.ndarray) -> float:
    return fold_sum(values) / values.size if values.size else 0.0


def _require(batch: TrajectoryBatch, variant: LossVariant) -> None:
    for name in _REQUIRED_FIELDS[variant]:
        batch.column(name, variant.value)


def assemble_loss(batch: TrajectoryBatch, cfg: LossConfig) -> LossBreakdown:
    """Batch loss, per-token gradient coefficients and diagnostics for ``cfg.variant``.

    The sequence loss is the sum of its token terms; the batch loss averages
    sequence losses over non-rejected trajectories. Rejected trajectories get
    zero coefficients but stay in every diagnostic except clip fraction.

    Raises:
        MissingFieldError: naming the variant and the absent field.
    """
    variant = cfg.variant
    _require(batch, variant)
    n_traj = len(batch)
    source = ppo_ratio_source(variant)

    adv = batch.column("advantage", variant.value)
    cur = batch.column("logp_cur", variant.value)
    rollout = batch.column("logp_rollout", variant.value)
    have_old = all(t.has_field("logp_old_train") for t in batch.trajectories)
    old = batch.column("logp_old_train") if have_old else [None] * n_traj

    r_train, r_rollout, r_corr = [], [], []
    for c, o, r in zip(cur, old, rollout):
        if o is None:
            r_rollout.append(np.exp(c - r))
            continue
        triple = ratio_triple(c, o, r)
        r_train.append(triple.r_train)
        r_rollout.append(triple.r_rollout)
        r_corr.append(triple.r_corr)
    ppo_ratio = r_train if source == "train" else r_rollout

    # sequence-level rejection
    rejected = [False] * n_traj
    if variant in _MASKED:
        signals = r_corr if cfg.mask_signal is MaskSignal.CORR_RATIO else ppo_ratio
        rejected = [
            not (seq_score(q, cfg.estimator, cfg.seq_agg) <= cfg.tau_seq) for q in signals
        ]
    kept = n_traj - sum(rejected)

    terms, coeffs, clipped_flags = [], [], []
    truncated = 0
    for i in range(n_traj):
        a = adv[i]
        if variant is LossVariant.REINFORCE:
            term = -a * cur[i]
            coeff = -a
            clipped = np.zeros(a.shape, dtype=bool)
        else:
            r = ppo_ratio[i]
            term, clipped = ppo_token_terms(r, a, cfg.clip_eps)
            coeff = np.where(clipped, 0.0, -a * r)
            if variant in _TRUNCATED:
                weight = np.minimum(r_corr[i], cfg.tau_tok)
                truncated += int(np.count_nonzero(r_corr[i] > cfg.tau_tok))
                term = weight * term
                coeff = weight * coeff
        if rejected[i] or kept == 0:
            coeffs.append(np.zeros(a.shape))
            continue
        terms.append(term)
        coeffs.append(coeff / kept)
        clipped_flags.append(clipped)

    all_adv = np.concatenate(adv) if adv else np.zeros(0)
    n_tokens = all_adv.size
    flat_ratio = np.concatenate(ppo_ratio) if ppo_ratio else np.zeros(0)
    flat_clipped = np.concatenate(clipped_flags) if clipped_flags else np.zeros(0, dtype=bool)

    estimator_means: Dict[str, Dict[str, float]] = {}
    histograms: Dict[str, ContributionHistogram] = {}
    for name, ratios in (("train", r_train), ("rollout", r_rollout), ("corr", r_corr)):
        if not ratios:
            continue
        flat = np.concatenate(ratios)
        estimator_means[name] = {"k1": _token_mean(k1(flat)), "k3": _token_mean(k3(flat))}
        if name != "corr":
            histograms[name] = ContributionHistogram.build(centered_contribution(flat, all_adv), all_adv)

    loss = fold_sum(np.concatenate(terms)) / kept if terms else 0.0
    breakdown = LossBreakdown(
        loss=float(loss),
        token_coeffs=coeffs,
        clip_fraction=_token_mean(flat_clipped.astype(np.float64)),
        rejection_rate=(n_traj - kept) / n_traj if n_traj else 0.0,
        tis_truncation_rate=truncated / n_tokens if (n_tokens and variant in _TRUNCATED) else 0.0,
        k1_mean=_token_mean(k1(flat_ratio)) if flat_ratio.size else 0.0,
        k3_mean=_token_mean(k3(flat_ratio)) if flat_ratio.size else 0.0,
        contribution_histogram=histograms.get(source)
        or ContributionHistogram.build(np.zeros(0), np.zeros(0)),
        rejected=rejected,
        estimator_means=estimator_means,
        contribution_histograms=histograms,
        kept=kept,
    )
    if kept < n_traj:
        logger.info(f"{variant.value}: rejected {n_traj - kept}/{n_traj} trajectories")
    return breakdown
