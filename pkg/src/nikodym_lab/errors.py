"""Exception hierarchy shared by all modules."""


class NikodymLabError(Exception):
    """Base class for every error raised by the package."""


class DomainError(NikodymLabError, ValueError):
    """A point or parameter lies outside the admissible working domain."""


class SingularityError(DomainError):
    """The perturbation reached |alpha| >= 1 and the metric degenerates."""


class PositiveDefinitenessError(NikodymLabError, ArithmeticError):
    """A quadratic form that must be positive came out negative."""


class TruncationError(NikodymLabError):
    """A geodesic left the coordinate box before the requested time.

    The partial path up to the exit is kept on ``partial``.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class InstabilityError(NikodymLabError, ArithmeticError):
    """Hamiltonian drift exceeded the integrator's error budget."""


class ConvergenceError(NikodymLabError, ArithmeticError):
    """An iterative solver did not reach its tolerance."""


class AmbiguityError(NikodymLabError):
    """Shooting found distinct geodesics of different lengths."""


class DegenerateTubeError(NikodymLabError):
    """Rejection sampling accepted no point of a tube."""


class ResolutionError(NikodymLabError):
    """A quadrature grid is too coarse for the requested frequency."""


class CounterexampleViolation(NikodymLabError):
    """A closed-form witness geodesic failed the property it was built for."""
