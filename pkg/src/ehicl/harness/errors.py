"""Harness failure categories, mapped onto CLI exit codes."""

__all__ = ["DataError", "NumericalError"]


class DataError(RuntimeError):
    """Missing or inconsistent corpus/template/checkpoint inputs (exit 3)."""


class NumericalError(RuntimeError):
    """Non-finite values in training or evaluation (exit 4)."""
