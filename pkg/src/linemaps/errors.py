"""Exception hierarchy shared by all linemaps modules."""


class LinemapsError(Exception):
    """Base class for every error raised by this package."""


class DegenerateCluster(LinemapsError):
    """All points of a cluster coincide, so no fitting direction exists."""


class SingularHessian(LinemapsError):
    """A chi-square Hessian has a non-positive determinant."""


class GridTooCoarse(LinemapsError):
    """Quadrature did not converge under grid refinement."""


class NoClusters(LinemapsError):
    """A scan contains no run of adjacent points long enough for a line."""


class SamplingExhausted(LinemapsError):
    """Rejection sampling gave up before collecting enough poses."""


class FrameMismatch(LinemapsError):
    """Segment sets living on different lines were combined."""


class SingularInnovation(LinemapsError):
    """An innovation covariance cannot be inverted."""


class IndeterminateSystem(LinemapsError):
    """The linearized least-squares system is rank deficient.

    ``variable`` names the first variable whose pivot collapsed, when known.
    """

    def __init__(self, message: str, variable=None):
        super().__init__(message)
        self.variable = variable


class ConfigError(LinemapsError):
    """A run configuration is malformed or references missing files."""
