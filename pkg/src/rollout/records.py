"""Trajectory records shared by rollout, loss assembly and tracing."""

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.errors import MissingFieldError

LOGPROB_FIELDS = ("logp_rollout", "logp_old_train", "logp_cur")


@dataclass(frozen=True)
class TokenRecord:
    """One response token and the three log-probabilities assigned to it."""

    token: int
    logp_rollout: float
    logp_old_train: Optional[float] = None
    logp_cur: Optional[float] = None
    advantage: Optional[float] = None
    rollout_top1: Optional[int] = None
    train_top1: Optional[int] = None


@dataclass
class Trajectory:
    prompt_id: int
    group_index: int
    prompt: Tuple[int, ...]
    tokens: List[TokenRecord]
    reward: float
    rejected: bool = False

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def response_tokens(self) -> np.ndarray:
        return np.asarray([rec.token for rec in self.tokens], dtype=np.int64)

    def has_field(self, name: str) -> bool:
        return all(getattr(rec, name) is not None for rec in self.tokens)

    def field_array(self, name: str, variant: str = "") -> np.ndarray:
        """Per-token values of ``name``.

        Raises:
            MissingFieldError: if any token lacks the field.
        """
        values = [getattr(rec, name) for rec in self.tokens]
        if any(v is None for v in values):
            who = f"{variant} needs " if variant else ""
            raise MissingFieldError(
                f"{who}{name}, which is missing on trajectory "
                f"(prompt {self.prompt_id}, g {self.group_index})"
            )
        return np.asarray(values, dtype=np.float64)

    def with_values(self, **columns: Sequence) -> "Trajectory":
        """Copy with per-token columns replaced, e.g. ``logp_cur=array``."""
        for name, values in columns.items():
            if len(values) != len(self.tokens):
                raise ValueError(f"{name} has {len(values)} values for {len(self.tokens)} tokens")
        new_tokens = [
            replace(rec, **{name: _plain(values[t]) for name, values in columns.items()})
            for t, rec in enumerate(self.tokens)
        ]
        return replace(self, tokens=new_tokens)


def _plain(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    return value


@dataclass
class TrajectoryBatch:
    """Trajectories sampled from one theta_old snapshot, in (prompt_id, g) order."""

    trajectories: List[Trajectory]
    params_old_fingerprint: str
    rollout_profile: Dict[str, object] = field(default_factory=dict)
    train_profile: Dict[str, object] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def token_count(self) -> int:
        return sum(len(t) for t in self.trajectories)

    @property
    def rewards(self) -> np.ndarray:
        return np.asarray([t.reward for t in self.trajectories], dtype=np.float64)

    def select(self, indices: Sequence[int]) -> "TrajectoryBatch":
        """Sub-batch sharing this batch's fingerprint and profiles."""
        return replace(self, trajectories=[self.trajectories[i] for i in indices])

    def with_trajectories(self, trajectories: List[Trajectory]) -> "TrajectoryBatch":
        return replace(self, trajectories=list(trajectories))

    def column(self, name: str, variant: str = "") -> List[np.ndarray]:
        """``field_array(name)`` for every trajectory."""
        return [t.field_array(name, variant) for t in self.trajectories]
