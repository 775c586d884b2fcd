"""
Error types shared by all modules.

Every error carries the exit code the CLI reports for it:
    0 success, 1 validation error, 2 missing inputs, 3 numeric failure
"""

from __future__ import annotations


class DoanetError(Exception):
    """Root of all errors raised on purpose by doanet."""

    exit_code = 1


class ValidationError(DoanetError, ValueError):
    """Invalid argument, shape mismatch, bad config or mismatched artifact."""

    exit_code = 1


class MissingInputError(DoanetError, LookupError):
    """A required file, corpus example or target is absent."""

    exit_code = 2


class NumericError(DoanetError, ArithmeticError):
    """Non-finite values where finite ones are required (e.g. NaN loss)."""

    exit_code = 3
