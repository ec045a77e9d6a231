"""Exception types shared across the package."""


class ParisiLabError(Exception):
    """Base class for all package errors."""


class DomainError(ParisiLabError, ValueError):
    """An argument lies outside the domain of the function."""


class ZeroMixtureError(ParisiLabError, ValueError):
    """A mixture with every coefficient zero was given where it is not allowed."""


class DegenerateDenominatorError(ParisiLabError, ValueError):
    """A ratio was requested whose denominator vanishes on the probe grid."""


class InvalidMeasureError(ParisiLabError, ValueError):
    """Atoms or weights do not describe a probability measure on [0, 1]."""


class InvalidCDFError(ParisiLabError, ValueError):
    """A callable passed as a distribution function is not one."""


class GridOverflowError(ParisiLabError, RuntimeError):
    """Probability mass escapes the spatial grid beyond the allowed threshold."""


class ConfigurationError(ParisiLabError, ValueError):
    """Numerical parameters are inconsistent (stability limits, grid sizes...)."""


class NotPSDError(ParisiLabError, ValueError):
    """A covariance path fails to be positive semidefinite.

    Attributes
    ----------
    witness : float
        Time at which the smallest eigenvalue was found negative.
    """

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class NumericalRootError(ParisiLabError, RuntimeError):
    """A root bracket could not be found."""


class HypothesisRefusal(ParisiLabError):
    """A structural hypothesis needed for a certificate does not hold.

    Attributes
    ----------
    hypothesis : str
        Short name of the failing hypothesis, e.g. ``"convexity"``.
    details : dict
        Diagnostic values (witness points, offending values).
    """

    def __init__(self, hypothesis, message, details=None):
        super().__init__(message)
        self.hypothesis = hypothesis
        self.details = dict(details or {})

    def to_dict(self):
        return {"refused": True, "hypothesis": self.hypothesis,
                "message": str(self), "details": self.details}


class InvalidModifiedMeasureError(InvalidMeasureError):
    """The reweighted distribution function used off the diagonal is not a
    distribution function (ratio not monotone or exceeding one)."""
