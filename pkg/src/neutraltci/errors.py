"""Exceptions raised by neutraltci.

All errors derive from NeutralTCIError so callers (the command line interface in particular) can
separate our failures from programming errors. The command line maps them to exit codes:

- DomainError: 2 (validation)
- AssumptionError: 3 (checker failure)
- anything else derived from NeutralTCIError: 4 (runtime)
"""

#
#  Copyright (c) 2025 Stephen Jibson
#
#  This file is part of neutraltci.
#
#  Neutraltci is free software: you can redistribute it and/or modify it under the terms of the
#  GNU General Public License as published by the Free Software Foundation, either version 3 of the
#  License, or (at your option) any later version.
#
#  Neutraltci is distributed in the hope that it will be useful, but WITHOUT ANY WARRANTY;
#  without even the implied warranty of MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See
#  the GNU General Public License for more details.
#
#  You should have received a copy of the GNU General Public License along with neutraltci.
#  If not, see <https://www.gnu.org/licenses/>.
#


class NeutralTCIError(Exception):
    """Base class for neutraltci errors."""


class DomainError(NeutralTCIError, ValueError):
    """An argument is outside the domain of an operation (off-grid time, grid mismatch, etc.)."""


class ConvergenceError(NeutralTCIError, ArithmeticError):
    """The fixed-point solve for the next state did not converge."""

    def __init__(self, message: str, *, residual: float, iterations: int) -> None:
        """Initialize a ConvergenceError with the last residual and the iteration count."""
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class NumericError(NeutralTCIError, ArithmeticError):
    """A coefficient evaluation produced NaN or infinity."""


class EstimationError(NeutralTCIError):
    """An empirical estimate could not be formed (e.g. every sampled pair was degenerate)."""


class SolverSizeError(NeutralTCIError):
    """The problem is too large for the exact assignment solver."""


class AssumptionError(NeutralTCIError):
    """A sampling checker falsified a declared constant."""

    def __init__(self, message: str, *, condition: str) -> None:
        """Initialize an AssumptionError naming the violated condition."""
        super().__init__(message)
        self.condition = condition
