"""Exception types raised across the package."""


class FBSCError(Exception):
    """Base class for all package errors."""


class DomainError(FBSCError, ValueError):
    """An argument lies outside the domain of the operation."""


class ModelError(FBSCError, ValueError):
    """The physical model is ill-posed (e.g. an unbound normal mode)."""


class CausticError(FBSCError, ArithmeticError):
    """The fluctuation Hessian is singular, so the semiclassical amplitude diverges."""


class ConvergenceError(FBSCError, RuntimeError):
    """A root search did not reach its tolerance."""

    def __init__(self, message, *, stage=None, result=None):
        super().__init__(message)
        self.stage = stage
        self.result = result


class ConfigError(FBSCError, ValueError):
    """A run configuration failed validation."""


class NumericalFailure(FBSCError, RuntimeError):
    """A run finished but its diagnostics exceed the allowed limits."""
