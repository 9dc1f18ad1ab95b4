"""Exception types shared across the package."""


class ExpansionError(Exception):
    """Base class for failures inside the expansion machinery."""


class CancellationFailure(ExpansionError):
    """Singular sqrt(tau) terms survived where they must cancel.

    This indicates a bug in the operator algebra, not bad input.
    """

    def __init__(self, monomials):
        self.monomials = dict(monomials)
        super().__init__(f"non-cancelling singular terms: {self.monomials}")


class OrderOverflow(ExpansionError):
    """A multi-index degree exceeded the configured cap."""


class SymbolicUnavailable(ExpansionError):
    """Symbolic-in-tau output was requested for a time-dependent model."""


class NonPositiveVariance(ExpansionError):
    """The averaged leading variance is not strictly positive."""


class DerivativeUnavailable(ExpansionError):
    """Numeric differentiation of a model coefficient failed its self-check."""


class OutOfArbitrageBounds(ValueError):
    """A call price lies outside ((e^x - e^k)^+, e^x)."""


class NoConvergence(RuntimeError):
    """An iterative solver hit its iteration cap."""


class BranchInstability(RuntimeError):
    """The complex logarithm in the Heston CF jumped branches."""


class NegativeVolWarning(UserWarning):
    """The truncated implied-vol series went non-positive."""
