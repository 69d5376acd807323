"""Exception types raised across the simulator.

Each error also derives from the builtin it specialises, so callers that only
care about ``ValueError`` / ``OverflowError`` keep working.
"""

from typing import Optional


class TimSimError(Exception):
    """Base class for simulator errors."""


class NonFiniteInputError(TimSimError, ValueError):
    """A kernel received NaN or infinity."""

    def __init__(self, message: str, index: Optional[tuple] = None):
        super().__init__(message)
        self.index = index


class ShapeMismatchError(TimSimError, ValueError):
    """Operand shapes are incompatible."""


class TokenRangeError(TimSimError, ValueError):
    """A token id falls outside the vocabulary."""


class PrecisionOverflowError(TimSimError, OverflowError):
    """A value exceeds the largest finite number of the target precision."""


class FingerprintMismatchError(TimSimError, ValueError):
    """A batch was produced by different parameters than the ones supplied."""


class MissingFieldError(TimSimError, ValueError):
    """A loss variant needs a log-probability field that is not populated."""


class TaskSpecError(TimSimError, ValueError):
    """A task specification cannot be realised within the window/vocabulary."""


class ConfigError(TimSimError, ValueError):
    """An experiment configuration is invalid."""


class TraceFormatError(TimSimError, ValueError):
    """A trace file line could not be parsed."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        super().__init__(message)
        self.line_number = line_number


class RatioRangeError(TimSimError, ValueError):
    """An importance ratio underflowed to zero or overflowed to infinity."""
