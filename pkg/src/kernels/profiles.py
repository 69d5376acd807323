"""Reduction orders and execution profiles.

An ExecutionProfile fully determines the numeric path of every kernel: the
order in which partial sums are combined, the tile width along the reduction
axis, the accumulation precision, whether activations are rounded between
layers and whether log-softmax materialises fixed-point probabilities. Equal
profiles give bitwise-equal outputs.
"""

import re
from enum import Enum
from typing import Dict, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.kernels.precision import PrecisionMode, quantize_array

_BLOCKED_RE = re.compile(r"^blocked\(\s*(\d+)\s*\)$")


class ReductionKind(str, Enum):
    SEQUENTIAL = "sequential"
    PAIRWISE_TREE = "pairwise_tree"
    BLOCKED = "blocked"


class ReductionOrder(BaseModel):
    """Order in which a sequence of terms is summed."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: ReductionKind = ReductionKind.SEQUENTIAL
    block_size: Optional[int] = Field(None, ge=1)

    @model_validator(mode="before")
    @classmethod
    def _parse_text(cls, data):
        if not isinstance(data, str):
            return data
        text = data.strip()
        if text in (ReductionKind.SEQUENTIAL.value, ReductionKind.PAIRWISE_TREE.value):
            return {"kind": text}
        match = _BLOCKED_RE.match(text)
        if not match:
            raise ValueError(
                f"Unknown reduction order {text!r}; expected sequential, pairwise_tree or blocked(n)"
            )
        return {"kind": ReductionKind.BLOCKED, "block_size": int(match.group(1))}

    @model_validator(mode="after")
    def _check_block(self) -> "ReductionOrder":
        if self.kind is ReductionKind.BLOCKED and self.block_size is None:
            raise ValueError("blocked reduction requires block_size >= 1")
        if self.kind is not ReductionKind.BLOCKED and self.block_size is not None:
            raise ValueError(f"block_size is only valid for blocked, not {self.kind.value}")
        return self

    @classmethod
    def sequential(cls) -> "ReductionOrder":
        return cls(kind=ReductionKind.SEQUENTIAL)

    @classmethod
    def pairwise_tree(cls) -> "ReductionOrder":
        return cls(kind=ReductionKind.PAIRWISE_TREE)

    @classmethod
    def blocked(cls, block_size: int) -> "ReductionOrder":
        return cls(kind=ReductionKind.BLOCKED, block_size=block_size)

    def describe(self) -> str:
        if self.kind is ReductionKind.BLOCKED:
            return f"blocked({self.block_size})"
        return self.kind.value


class ExecutionProfile(BaseModel):
    """Complete description of a kernel execution path."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    reduction: ReductionOrder = Field(default_factory=ReductionOrder.sequential)
    tile: int = Field(32, ge=1, description="Fixed tile width along the reduction axis")
    accum: PrecisionMode = Field(default_factory=PrecisionMode.full64)
    intermediate_rounding: bool = Field(False, description="Round activations between layers")
    prob_frac_bits: Optional[int] = Field(
        None,
        ge=4,
        le=30,
        description="Fractional bits of the fixed-point probabilities behind log_softmax",
    )

    @model_validator(mode="before")
    @classmethod
    def _resolve_name(cls, data):
        if isinstance(data, str):
            return get_profile(data).model_dump()
        return data

    def round_activations(self, values):
        """Apply activation rounding when the profile asks for it."""
        if self.intermediate_rounding:
            return quantize_array(values, self.accum)
        return values

    def describe(self) -> Dict[str, object]:
        """Flat descriptor used in manifests and traces."""
        return {
            "name": profile_name(self),
            "reduction": self.reduction.describe(),
            "tile": self.tile,
            "accum": self.accum.describe(),
            "intermediate_rounding": self.intermediate_rounding,
            "prob_frac_bits": self.prob_frac_bits,
        }


EXACT = ExecutionProfile()

# Variant profiles: mathematically the same kernels with a different reduction
# order, tiling and accumulation grid. fp32_fixedprob also stores sampling
# probabilities on a 2**-12 grid, which leaves likely tokens almost untouched
# and moves rare ones by up to a few nats.
PROFILES: Dict[str, ExecutionProfile] = {
    "exact": EXACT,
    "fp32_tiled": ExecutionProfile(
        reduction=ReductionOrder.pairwise_tree(),
        tile=16,
        accum=PrecisionMode.full32(),
        intermediate_rounding=True,
    ),
    "fp16_blocked": ExecutionProfile(
        reduction=ReductionOrder.blocked(4),
        tile=16,
        accum=PrecisionMode.emulated(10, exponent_bits=5),
        intermediate_rounding=True,
    ),
    "bf16_tree": ExecutionProfile(
        reduction=ReductionOrder.pairwise_tree(),
        tile=8,
        accum=PrecisionMode.emulated(7),
        intermediate_rounding=True,
    ),
    "fp32_fixedprob": ExecutionProfile(
        reduction=ReductionOrder.pairwise_tree(),
        tile=16,
        accum=PrecisionMode.full32(),
        intermediate_rounding=True,
        prob_frac_bits=12,
    ),
}

# Profile used as the mismatch-injecting rollout engine in the reproduction checks.
CALIBRATED_MISMATCH = "fp32_fixedprob"


def get_profile(name: str) -> ExecutionProfile:
    """Look up a shipped profile by name."""
    try:
        return PROFILES[name]
    except KeyError:
        raise ValueError(f"Unknown profile {name!r}; shipped profiles: {sorted(PROFILES)}") from None


def profile_name(profile: ExecutionProfile) -> str:
    """Name of a shipped profile equal to ``profile``, or ``custom``."""
    for name, shipped in PROFILES.items():
        if shipped == profile:
            return name
    return "custom"
