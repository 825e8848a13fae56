"""Exception hierarchy.

Errors split into two families so that front ends can map them to exit
codes: ``DomainError`` for inputs that violate a mathematical precondition
and ``NumericalFailure`` for algorithms that did not converge or produced
non-finite numbers.
"""


class SaddleError(Exception):
    """Base class for all library errors."""


class DomainError(SaddleError, ValueError):
    """An input violates a precondition of the requested operation."""


class NumericalFailure(SaddleError, ArithmeticError):
    """A numerical routine failed to produce a trustworthy answer."""


class NumericalError(NumericalFailure):
    """A non-finite value appeared, or an integrator step size underflowed."""


class OrderExceedsCap(DomainError):
    """No nonvanishing Taylor term was found up to the requested degree."""


class NotCritical(DomainError):
    """The point is not a critical point within tolerance."""


class SearchBudgetExhausted(NumericalFailure):
    """Too few multi-start runs converged."""


class MetricSingular(NumericalFailure):
    """The pulled-back metric block is singular at the requested radius."""


class InsufficientTail(DomainError):
    """A trajectory is too short for tail statistics."""


class NonpositiveValues(DomainError):
    """Values that must be positive on a trajectory tail were not."""


class ShapeMismatch(DomainError):
    """Array shapes do not fit the problem dimensions."""


class HypothesisViolated(DomainError):
    """The configuration does not satisfy the structural hypothesis required."""


class NoUnstableDirection(DomainError):
    """The linear map has no eigenvalue of modulus greater than one."""


class IllConditioned(NumericalFailure):
    """Invariant subspaces are numerically indistinguishable."""


class ContractionFailure(NumericalFailure):
    """A contraction iteration diverged or stalled."""


class RootFindFailure(NumericalFailure):
    """A preimage solve did not converge."""


class BoxEscape(NumericalFailure):
    """A preimage left the padded grid box."""


class MaxIterations(NumericalFailure):
    """A fixed-point iteration hit its iteration cap.

    Attributes
    ----------
    last_ratio : float or None
        The last observed ratio between successive iterate distances.
    """

    def __init__(self, message: str, last_ratio: float | None = None):
        super().__init__(message)
        self.last_ratio = last_ratio


class OrbitOverflow(NumericalFailure):
    """A forward orbit overflowed before reaching the requested length."""
