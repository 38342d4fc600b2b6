"""Exception hierarchy. CLI exit codes map onto these classes."""

from __future__ import annotations


class SoftUnlearnError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class DataError(SoftUnlearnError, ValueError):
    """Malformed input data or a precondition on data contents."""

    exit_code = 2


class NumericalError(SoftUnlearnError, ArithmeticError):
    """A numerical routine could not produce a trustworthy result."""

    exit_code = 3


class NotPositiveDefiniteError(NumericalError):
    def __init__(self, min_eigenvalue: float):
        self.min_eigenvalue = float(min_eigenvalue)
        super().__init__(
            f"matrix is not positive definite (smallest eigenvalue ~ {self.min_eigenvalue:.3e}); "
            "increase damping or l2_reg"
        )


class ConvergenceError(NumericalError):
    def __init__(self, message: str, grad_norm: float, params=None):
        self.grad_norm = float(grad_norm)
        self.params = params
        super().__init__(f"{message} (final gradient norm {self.grad_norm:.3e})")


class StaleSnapshotError(SoftUnlearnError):
    """Cached influence/Hessian state used against a different model."""


class QPIterationError(NumericalError):
    def __init__(self, message: str, best_eps, residuals: dict):
        self.best_eps = best_eps
        self.residuals = residuals
        super().__init__(f"{message}; KKT residuals {residuals}")
