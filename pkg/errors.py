"""
Exception hierarchy shared by the solver modules.
"""


class GmsfemError(Exception):
    """Base class for all solver errors"""


class InvalidConfigurationError(GmsfemError, ValueError):
    """Grid sizes, space dimensions or config values that cannot be honoured"""


class DomainError(GmsfemError, ValueError):
    """Input outside the mathematical domain of an operation"""


class FactorizationError(GmsfemError, ArithmeticError):
    """A matrix that must be SPD failed its Cholesky factorization"""


class SolverError(GmsfemError, RuntimeError):
    """A linear solve failed or missed its residual contract"""

    def __init__(self, message, diagnostic=None):
        super().__init__(message)
        self.diagnostic = diagnostic or {}


class ConvergenceError(SolverError):
    """Picard iteration hit max_iters; the trace is attached"""

    def __init__(self, message, trace=None):
        super().__init__(message, diagnostic={'iterations': len(trace) if trace else 0})
        self.trace = trace
