"""Exception hierarchy shared by the solvers and the CLI."""

from __future__ import annotations


class MfgCapError(Exception):
    """Base class for all package errors."""


class ValidationError(MfgCapError, ValueError):
    """Bad input: unknown unit tag, invalid parameter, malformed config."""


class DomainError(MfgCapError, ValueError):
    """A function was evaluated outside its domain (e.g. P(0) for p/x)."""


class PreconditionError(MfgCapError, ValueError):
    """A solver precondition does not hold (assumption check, sigma bound)."""


class GridError(MfgCapError, ValueError):
    """Grid too coarse or inconsistent with the problem (CFL, x_end > x_max)."""

    def __init__(self, message: str, required_n_t: int | None = None):
        super().__init__(message)
        self.required_n_t = required_n_t


class ConvergenceError(MfgCapError, RuntimeError):
    """An iterative method failed to reach its tolerance."""

    def __init__(self, message: str, residual: float | None = None,
                 residual_history: list[float] | None = None):
        super().__init__(message)
        self.residual = residual
        self.residual_history = list(residual_history or [])


class BracketError(ConvergenceError):
    """Root-bracketing failed (same sign at both ends)."""


class DivergenceError(ConvergenceError):
    """Non-finite state encountered during forward integration."""

    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


class SchemeFault(MfgCapError, RuntimeError):
    """A numerical scheme produced an invalid state (negative density)."""
