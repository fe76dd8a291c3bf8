"""Exception hierarchy shared by all modules."""


class TangentGroupoidError(Exception):
    """Base class for every error raised by this package."""


class DomainError(TangentGroupoidError, ValueError):
    """A point lies outside the chart domain."""


class GeodesicExcursionError(TangentGroupoidError):
    """A geodesic left the chart domain during integration."""

    def __init__(self, message, exit_parameter=None):
        super().__init__(message)
        self.exit_parameter = exit_parameter


class InjectivityError(TangentGroupoidError):
    """A tangent vector or point separation exceeds the injectivity floor."""


class ConvergenceError(TangentGroupoidError):
    """An iterative solver failed to converge."""


class ComposabilityError(TangentGroupoidError, ValueError):
    """Two groupoid elements cannot be composed."""


class ShapeError(TangentGroupoidError, ValueError):
    """Grid or array shapes are incompatible."""


class SamplingError(TangentGroupoidError, ValueError):
    """A symbol closure produced non-finite values."""


class UnsupportedError(TangentGroupoidError, NotImplementedError):
    """The requested scheme or chart combination is not supported."""


class UndefinedRatioError(TangentGroupoidError, ZeroDivisionError):
    """A relative quantity has a vanishing denominator."""


class PreconditionError(TangentGroupoidError, ValueError):
    """Caller supplied inconsistent inputs."""
