"""
Exceptions raised by the meta Gibbs laboratory.

Numerical modules raise these at the point of failure; the CLI maps them
to exit codes (configuration/runtime errors exit 1, failed checks exit 2).
"""


class LabError(Exception):
    """Base class for every error raised by the laboratory."""


class ValidationError(LabError, ValueError):
    """An input violates a precondition of the requested operation."""


class SupportMismatch(ValidationError):
    """Absolute continuity fails between two distributions."""

    def __init__(self, message: str, context=None):
        super().__init__(message)
        self.context = context


class DomainMismatch(ValidationError):
    """Two distributions are defined over different outcome spaces."""


class UnknownAxis(ValidationError):
    """A named axis does not exist in a joint distribution."""


class SingularCovariance(ValidationError):
    """A covariance matrix that must be invertible is singular."""


class NegativeGamma(ValidationError):
    """The inverse temperature is negative."""


class ZeroGamma(ValidationError):
    """An operation divides by the inverse temperature and it is zero."""


class PriorSupportMismatch(ValidationError):
    """A prior is not defined on the hypothesis space it is used with."""


class SingularPrecision(ValidationError):
    """A Gaussian Gibbs posterior is improper (singular precision)."""

    def __init__(self, message: str, null_space=None):
        super().__init__(message)
        self.null_space = null_space


class DegenerateAlpha(ValidationError):
    """The mean-estimation joint posterior is improper at alpha in {0, 1}."""


class NonFactorizedPrior(ValidationError):
    """A prior expected to be a product over (u, w_1, ..., w_m) is not."""


class LossRangeViolation(ValidationError):
    """A loss table falls outside the range a bound requires."""


class ShapeMismatch(ValidationError):
    """Array shapes do not match the super-sample layout."""


class ZeroMutualInformation(ValidationError):
    """A ratio over mutual information is undefined because I is zero."""


class StateSpaceTooLarge(LabError):
    """Exact enumeration would exceed the configured state cap."""

    def __init__(self, required: int, cap: int):
        super().__init__(f"Enumeration needs {required} states, cap is {cap}")
        self.required = required
        self.cap = cap


class ConfigInvalid(LabError):
    """An experiment config failed validation."""


class CheckFailed(LabError):
    """A declared verification check exceeded its tolerance."""
