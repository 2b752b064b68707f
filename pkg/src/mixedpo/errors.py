"""Exception hierarchy shared by all modules."""


class MixedPOError(Exception):
    """Base class for every error raised by the package."""


class DimensionError(MixedPOError, ValueError):
    """Matrix shapes are inconsistent."""


class DomainError(MixedPOError, ValueError):
    """A scalar parameter lies outside its admissible range."""


class NumericalError(MixedPOError):
    """A linear solve failed or produced a non-finite result."""


class InstabilityError(MixedPOError):
    """A closed-loop matrix that must be stable is not."""


class InfeasibleError(MixedPOError):
    """A Riccati iteration lost positive definiteness or diverged.

    Parameters
    ----------
    message : str
        Human readable reason.
    margin : float, optional
        The last observed value of ``lambda_min(gamma^2 I - D^T P D)``.
    iterations : int, optional
        Number of iterations completed before failure.
    """

    def __init__(self, message, margin=None, iterations=None):
        super().__init__(message)
        self.margin = margin
        self.iterations = iterations


class NonConvergenceError(MixedPOError):
    """An iteration hit its budget without meeting the tolerance."""

    def __init__(self, message, iterations=None, last_step=None):
        super().__init__(message)
        self.iterations = iterations
        self.last_step = last_step


class BracketOverflow(MixedPOError):
    """The upper bracket of a bisection grew past its cap."""


class SearchFailure(MixedPOError):
    """Random search for a feasible gain exhausted its budget."""


class FeasibilityViolation(MixedPOError):
    """An update left the feasible set.

    The rejected candidate is kept in ``candidate``.
    """

    def __init__(self, message, candidate=None):
        super().__init__(message)
        self.candidate = candidate


class EstimationError(MixedPOError):
    """A sampled estimate is unusable (for example a singular covariance)."""


class ConfigError(MixedPOError, ValueError):
    """An experiment configuration is malformed."""
