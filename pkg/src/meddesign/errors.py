"""Exception hierarchy shared by all modules."""


class MedDesignError(Exception):
    """Base class for every error raised by this package."""


class DomainError(MedDesignError, ValueError):
    """A dose or parameter lies outside the domain of a regression function."""


class RangeError(MedDesignError):
    """The gradient at a dose combination is not in the range of M(xi, theta).

    The design cannot estimate the effect at that point, so the predictive
    variance is undefined.
    """

    def __init__(self, message, point=None, index=None, prior_index=None):
        super().__init__(message)
        self.point = point
        self.index = index
        self.prior_index = prior_index


class SingularInformation(MedDesignError):
    """The information matrix is (numerically) singular."""


class DegenerateSurface(MedDesignError):
    """The response surface is constant on the design region."""


class NoSolution(MedDesignError):
    """No dose attains the requested effect level."""


class EmptyContour(MedDesignError):
    """None of the requested MED levels yields a contour inside the region."""


class ContourFailure(MedDesignError):
    """A fitted surface has an empty MED set for some level."""


class FitFailure(MedDesignError):
    """Least-squares refit did not converge or produced a degenerate surface."""


class UnsupportedRay(MedDesignError, ValueError):
    """Requested ray design family is not one of the tabulated ones."""


class NoFeasibleDesign(MedDesignError):
    """Every particle violated the range condition after repair."""


class ConfigError(MedDesignError, ValueError):
    """Invalid problem configuration; ``field`` holds the dotted path."""

    def __init__(self, field, reason):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason
