"""timsim - A desk-scale training-inference mismatch simulator."""

__version__ = "0.1.0"
