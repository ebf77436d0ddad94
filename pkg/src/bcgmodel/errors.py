"""Exception hierarchy shared by all modules.

The CLI maps each family onto an exit code, so new errors should subclass
one of the three roots below rather than ``Exception`` directly.
"""

from __future__ import annotations


class BCGError(Exception):
    """Root of every error raised by this package."""


class DomainError(BCGError, ValueError):
    """An input violates a documented precondition."""


class ConfigError(BCGError, ValueError):
    """A configuration value is missing, unknown or out of range."""


class NumericalError(BCGError, ArithmeticError):
    """A numerical routine could not produce a trustworthy result."""


class StiffnessError(NumericalError):
    """The adaptive integrator's step size underflowed."""

    def __init__(self, message: str, t: float, h: float, state=None):
        super().__init__(message)
        self.t = t
        self.h = h
        self.state = state


class DivergenceError(NumericalError):
    """The integrated state became non-finite."""

    def __init__(self, message: str, t: float, state=None):
        super().__init__(message)
        self.t = t
        self.state = state


class DegenerateTestError(NumericalError):
    """A statistical test was asked to work with zero-variance input."""


class ConsistencyError(NumericalError):
    """An internal self-check failed (model and derived quantity disagree)."""


class DataError(BCGError):
    """A data file is malformed. Carries the offending row and column."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column '{column}'")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)
        self.row = row
        self.column = column
