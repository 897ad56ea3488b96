"""Exception hierarchy shared by all modules."""


class TransportLabError(Exception):
    """Base class for every error raised by the package."""


class DomainError(TransportLabError, ValueError):
    """A point or region lies outside where an object is defined."""


class ResolutionError(TransportLabError):
    """The grid is too coarse for the requested operation."""


class InfeasibleGeometryError(TransportLabError):
    """No subdomain with the requested diameter exists.

    The largest admissible radius ``r`` is carried on the instance.
    """

    def __init__(self, message, r):
        super().__init__(message)
        self.r = r


class ParameterError(TransportLabError, ValueError):
    """A scalar parameter violates its documented range."""


class ConfigurationError(ParameterError):
    """Discretisation settings are inconsistent (e.g. a CFL violation)."""


class DataError(TransportLabError):
    """Input data is missing, non-finite or not determined where needed."""


class RunawayError(TransportLabError):
    """A characteristic integration exceeded its step cap."""


class ArityError(TransportLabError, ValueError):
    """Wrong number of fields supplied."""


class IllPosedFamilyError(TransportLabError):
    """Gradient matrix of the initial family is singular at some node."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class DegenerateInitialDatumError(TransportLabError):
    """The initial datum vanishes (or nearly) somewhere in the region."""


class AdmissibilityError(TransportLabError):
    """A coefficient left the admissible set."""


class InsufficientRangeError(TransportLabError):
    """A sweep's measured data spans too little range for a log fit."""


class UnsupportedCaseError(TransportLabError):
    """The requested data configuration has no stability result."""


class InvalidProfileError(TransportLabError, ValueError):
    """Profile function violates its support requirements."""


class InvalidInputError(TransportLabError):
    """Input fails a consistency check (e.g. PDE residual too large)."""


class VerificationFailure(TransportLabError):
    """No constants on the search grid satisfy the tabulated inequality."""
