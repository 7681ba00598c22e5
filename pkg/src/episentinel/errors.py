"""Typed error hierarchy mapped to process exit codes.

The CLI translates exceptions to exit codes: configuration problems exit 2,
simulation failures exit 3, evaluation failures exit 4, and I/O errors
(plain OSError) exit 5. Each error carries an optional ``stage`` tag naming
the pipeline stage that raised it.
"""

from __future__ import annotations


class SentinelError(Exception):
    """Base class for all package errors."""

    exit_code = 1

    def __init__(self, message: str, *, stage: str | None = None):
        super().__init__(message)
        self.stage = stage

    def describe(self) -> dict:
        return {
            "error": type(self).__name__,
            "message": str(self),
            "stage": self.stage,
            "exit_code": self.exit_code,
        }


class ConfigurationError(SentinelError):
    """Invalid configuration, parameters, or input schema."""

    exit_code = 2


class InvalidParameterError(ConfigurationError):
    """A distribution or model parameter is out of its valid domain."""


class SimulationError(SentinelError):
    """Internal inconsistency while generating synthetic data."""

    exit_code = 3


class EvaluationError(SentinelError):
    """Model fitting or metric evaluation failed irrecoverably."""

    exit_code = 4
