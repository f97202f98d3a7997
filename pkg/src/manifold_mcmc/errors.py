"""Exception types raised across the package."""

from __future__ import annotations


class ManifoldMCMCError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(ManifoldMCMCError):
    """Cholesky factorization hit a non-positive pivot."""

    def __init__(self, row: int):
        super().__init__(f"matrix is not positive definite (pivot at row {row})")
        self.row = row


class NotSymmetric(ManifoldMCMCError, ValueError):
    """Matrix asymmetry exceeds the symmetrization tolerance."""


class DimensionMismatch(ManifoldMCMCError, ValueError):
    pass


class InvalidDof(ManifoldMCMCError, ValueError):
    pass


class NonFiniteState(ManifoldMCMCError, ArithmeticError):
    pass


class FixedPointDiverged(ManifoldMCMCError, ArithmeticError):
    def __init__(self, iters: int, increment: float):
        super().__init__(
            f"fixed-point iteration did not converge in {iters} iterations "
            f"(last increment {increment:.3e})"
        )
        self.iters = iters
        self.increment = increment


class TraceTooShort(ManifoldMCMCError, ValueError):
    pass


class MissingSeries(ManifoldMCMCError, KeyError):
    pass


class NonIntegrable(ManifoldMCMCError, ValueError):
    pass


class ChainAbort(ManifoldMCMCError):
    """A chain stopped early; carries the step index at which it failed."""

    def __init__(self, step: int, cause: BaseException):
        super().__init__(f"chain aborted at step {step}: {cause}")
        self.step = step
        self.cause = cause


class ConfigError(ManifoldMCMCError):
    """Base class for experiment configuration problems."""


class ParseError(ConfigError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")
        self.line = line
        self.column = column


class ValidationError(ConfigError):
    def __init__(self, field: str, reason: str):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


class CapabilityError(ConfigError):
    pass
