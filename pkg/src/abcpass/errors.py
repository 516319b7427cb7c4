"""Exception types shared across the package."""

from __future__ import annotations


class AbcError(Exception):
    """Base class of all errors raised by this package."""


class ContractViolation(AbcError, ValueError):
    """An operation was called outside its preconditions."""


class SingularCovarianceError(ContractViolation):
    """The statistics covariance cannot be inverted; names the culprits."""

    def __init__(self, message: str, statistics: list[str]):
        super().__init__(message)
        self.statistics = statistics


class SimulationError(AbcError, RuntimeError):
    """A simulator kept failing past the retry budget."""


class CalibrationError(AbcError, RuntimeError):
    """Warm-start rounds were exhausted; carries the per-parameter report."""

    def __init__(self, message: str, report: dict):
        super().__init__(message)
        self.report = report


class ConfigError(AbcError, ValueError):
    """Invalid run configuration."""


class DataFormatError(AbcError, ValueError):
    """Malformed input data; ``line`` is the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line
