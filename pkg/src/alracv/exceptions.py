"""Exception hierarchy shared by every stage of the pipeline."""


class AcvError(Exception):
    """Base class for all errors raised by :mod:`alracv`."""


class DomainError(AcvError, ValueError):
    """A response value lies outside the family's support."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class ConvergenceError(AcvError, RuntimeError):
    """The optimizer stopped before reaching the gradient tolerance."""

    def __init__(self, message, grad_norm=None, fold=None):
        super().__init__(message)
        self.grad_norm = grad_norm
        self.fold = fold


class FactorizationError(AcvError, RuntimeError):
    """A Cholesky factorization failed (matrix numerically not SPD)."""

    def __init__(self, message, smallest_pivot=None):
        super().__init__(message)
        self.smallest_pivot = smallest_pivot


class SketchError(AcvError, RuntimeError):
    """Randomized sketch construction failed (rank loss or Cholesky)."""


class ConfigError(AcvError, ValueError):
    """Inconsistent or invalid run configuration."""
