"""Exception hierarchy shared across the package."""


class CapstratError(Exception):
    """Base class for all package errors."""


class InvalidInputError(CapstratError, ValueError):
    """Malformed or inconsistent input (dimension mismatch, bad schema, ...)."""


class RegimeError(CapstratError):
    """Noise level too low for the requested guarantee (uniqueness/contraction)."""


class NonConvergenceError(CapstratError):
    """An iterative solver exhausted its budget.

    ``trace`` carries the iterates visited so callers can dump them.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class RankError(CapstratError):
    """Singular or rank-deficient regression design."""


class DegenerateStepError(CapstratError):
    """A projection onto the sphere was requested for a (near) zero vector."""


class IllConditionedError(CapstratError):
    """The density-minus-slope denominator of the threshold sensitivity is ~0."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class BoundaryWarning(UserWarning):
    """A best response hit the covariate box and was clamped."""
