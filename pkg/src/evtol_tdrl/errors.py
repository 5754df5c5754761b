"""Exception types shared across the package."""

from __future__ import annotations


class ContractViolation(ValueError):
    """A caller broke an operation's documented precondition."""


class ThrustSolverError(RuntimeError):
    """Newton iteration on the momentum-theory power balance failed to converge."""

    def __init__(self, message: str, last_thrust: float, residual: float) -> None:
        super().__init__(f"{message} (last T={last_thrust!r} N, residual={residual!r} W)")
        self.last_thrust = last_thrust
        self.residual = residual


class NumericalFailure(RuntimeError):
    """A training loop produced a non-finite loss or gradient."""
