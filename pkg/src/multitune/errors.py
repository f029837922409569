"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration problems exit with 2,
numerical failures with 3 and objective adapter failures with 4.
"""

from __future__ import annotations


class MultituneError(Exception):
    """Base class for all package errors."""


class ConfigError(MultituneError):
    """Invalid experiment configuration or space definition file."""


class InvalidConfigurationError(MultituneError):
    """A parameter configuration violates the space it belongs to."""


class SamplingExhaustedError(MultituneError):
    """Rejection sampling hit its retry cap before collecting enough valid points."""

    def __init__(self, message: str, validity_rate: float | None = None):
        super().__init__(message)
        self.validity_rate = validity_rate


class NumericalError(MultituneError):
    """Linear algebra failed even after jitter escalation, or all fit restarts failed."""


class RegressionError(MultituneError):
    """Coefficient regression cannot be performed (underdetermined or rank-deficient)."""


class ObjectiveError(MultituneError):
    """An objective evaluation failed; carries the offending task/configuration."""

    def __init__(self, message: str, task=None, config=None):
        super().__init__(message)
        self.task = task
        self.config = config
