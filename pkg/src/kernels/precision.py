"""Precision modes and round-to-nearest-even quantization.

All storage is float64. Reduced precision is emulated by rounding values onto
the grid of a narrower binary format, so mismatch can be injected on any
platform without native half-precision arithmetic.
"""

import re
from enum import Enum
from typing import Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.errors import PrecisionOverflowError

_EMULATED_RE = re.compile(r"^emulated_reduced\(\s*(\d+)\s*(?:,\s*(\d+)\s*)?\)$")


class PrecisionKind(str, Enum):
    FULL64 = "full64"
    FULL32 = "full32"
    EMULATED_REDUCED = "emulated_reduced"


class PrecisionMode(BaseModel):
    """Effective rounding applied to operands, partials and activations.

    ``emulated_reduced`` rounds to ``mantissa_bits`` explicit significand bits
    with an IEEE-style exponent of ``exponent_bits`` bits (8 = binary32 range,
    5 = binary16 range with gradual underflow).
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: PrecisionKind = PrecisionKind.FULL64
    mantissa_bits: Optional[int] = Field(None, ge=4, le=23)
    exponent_bits: int = Field(8, ge=4, le=11)

    @model_validator(mode="before")
    @classmethod
    def _parse_text(cls, data):
        if isinstance(data, str):
            return cls._text_to_fields(data)
        return data

    @model_validator(mode="after")
    def _check_fields(self) -> "PrecisionMode":
        if self.kind is PrecisionKind.EMULATED_REDUCED and self.mantissa_bits is None:
            raise ValueError("emulated_reduced requires mantissa_bits in [4, 23]")
        if self.kind is not PrecisionKind.EMULATED_REDUCED and self.mantissa_bits is not None:
            raise ValueError(f"mantissa_bits is only valid for emulated_reduced, not {self.kind.value}")
        return self

    @staticmethod
    def _text_to_fields(text: str) -> dict:
        text = text.strip()
        if text in (PrecisionKind.FULL64.value, PrecisionKind.FULL32.value):
            return {"kind": text}
        match = _EMULATED_RE.match(text)
        if not match:
            raise ValueError(
                f"Unknown precision {text!r}; expected full64, full32 or emulated_reduced(m[, e])"
            )
        fields = {"kind": PrecisionKind.EMULATED_REDUCED, "mantissa_bits": int(match.group(1))}
        if match.group(2) is not None:
            fields["exponent_bits"] = int(match.group(2))
        return fields

    @classmethod
    def full64(cls) -> "PrecisionMode":
        return cls(kind=PrecisionKind.FULL64)

    @classmethod
    def full32(cls) -> "PrecisionMode":
        return cls(kind=PrecisionKind.FULL32)

    @classmethod
    def emulated(cls, mantissa_bits: int, exponent_bits: int = 8) -> "PrecisionMode":
        return cls(
            kind=PrecisionKind.EMULATED_REDUCED,
            mantissa_bits=mantissa_bits,
            exponent_bits=exponent_bits,
        )

    @property
    def is_exact(self) -> bool:
        return self.kind is PrecisionKind.FULL64

    def describe(self) -> str:
        if self.kind is PrecisionKind.EMULATED_REDUCED:
            if self.exponent_bits == 8:
                return f"emulated_reduced({self.mantissa_bits})"
            return f"emulated_reduced({self.mantissa_bits}, {self.exponent_bits})"
        return self.kind.value

    def max_finite(self) -> float:
        """Largest finite magnitude representable in this mode."""
        if self.kind is PrecisionKind.FULL64:
            return float(np.finfo(np.float64).max)
        if self.kind is PrecisionKind.FULL32:
            return float(np.finfo(np.float32).max)
        emax = 2 ** (self.exponent_bits - 1) - 1
        return float(np.ldexp(2.0 - 2.0 ** -self.mantissa_bits, emax))

    def min_exponent(self) -> int:
        """Smallest normal exponent (emin) of the emulated format."""
        return 2 - 2 ** (self.exponent_bits - 1)


def quantize_array(values: Union[np.ndarray, float], precision: PrecisionMode) -> np.ndarray:
    """Round every element of ``values`` to ``precision`` (round half to even).

    Raises:
        PrecisionOverflowError: if a finite input rounds beyond the format's range.
    """
    arr = np.asarray(values, dtype=np.float64)
    if precision.kind is PrecisionKind.FULL64:
        return arr

    if precision.kind is PrecisionKind.FULL32:
        with np.errstate(over="ignore"):
            out = arr.astype(np.float32).astype(np.float64)
        overflow = np.isinf(out) & np.isfinite(arr)
        if np.any(overflow):
            idx = tuple(int(i) for i in np.argwhere(overflow)[0])
            raise PrecisionOverflowError(f"Value {arr[idx]!r} at {idx} overflows full32")
        return out

    m = precision.mantissa_bits
    # x = f * 2**e with 0.5 <= |f| < 1, so the unbiased exponent is e - 1
    _, exponent = np.frexp(arr)
    unbiased = np.maximum(exponent - 1, precision.min_exponent())
    shift = (unbiased - m).astype(np.int32)
    out = np.ldexp(np.rint(np.ldexp(arr, -shift)), shift)
    overflow = np.abs(out) > precision.max_finite()
    if np.any(overflow):
        idx = tuple(int(i) for i in np.argwhere(overflow)[0])
        raise PrecisionOverflowError(
            f"Value {arr[idx]!r} at {idx} overflows {precision.describe()}"
        )
    return out


def quantize(x: float, precision: PrecisionMode) -> float:
    """Scalar form of :func:`quantize_array`."""
    return float(quantize_array(np.float64(x), precision))


def fixed_point_logprobs(logp: np.ndarray, frac_bits: int) -> np.ndarray:
    """Log of probabilities stored as unsigned fixed-point fractions.

    Each ``exp(logp)`` is rounded half to even onto the grid ``k * 2**-frac_bits``
    and floored at one quantum, so every token keeps a non-zero probability.
    Rows are not renormalised. The relative error grows as ``2**-frac_bits / p``,
    so it is negligible for likely tokens and large for rare ones.
    """
    scale = np.ldexp(1.0, frac_bits)
    units = np.maximum(np.rint(np.exp(np.asarray(logp, dtype=np.float64)) * scale), 1.0)
    return np.log(np.ldexp(units, -frac_bits))
