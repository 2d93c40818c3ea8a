"""Exception hierarchy.

Validation problems (bad input, bad configuration) and numerical problems
(singular systems) are kept apart so the command line can map them to
distinct exit codes.
"""

from __future__ import annotations

__all__ = [
    "SmartMrtError",
    "ValidationError",
    "PositivityError",
    "ContrastError",
    "NumericalError",
    "RankDeficientError",
]


class SmartMrtError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ValidationError(SmartMrtError, ValueError):
    """Input data or configuration violates a documented contract."""

    exit_code = 2


class PositivityError(ValidationError):
    """A randomization probability lies outside the open unit interval."""


class ContrastError(ValidationError):
    """A requested contrast is not defined for the design or model."""


class NumericalError(SmartMrtError, ArithmeticError):
    """A linear system could not be solved reliably."""

    exit_code = 3


class RankDeficientError(NumericalError):
    """Weighted design matrix is rank deficient.

    Parameters
    ----------
    message : str
        Human readable description.
    null_terms : sequence of str
        Names of the columns that load on the numerical null space.
    """

    def __init__(self, message: str, null_terms=()):
        super().__init__(message)
        self.null_terms = tuple(null_terms)
