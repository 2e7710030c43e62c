"""Exception types shared across the package."""


class LinSDEError(Exception):
    """Base class for package-specific failures."""


class UnknownModelError(LinSDEError, KeyError):
    """Requested model name is not in the catalog."""

    def __str__(self):
        # KeyError quotes its argument; keep the plain message readable.
        return self.args[0] if self.args else ""


class NumericalDomainError(LinSDEError):
    """A coefficient evaluation produced a non-finite value."""

    def __init__(self, message, point=None, time=None):
        super().__init__(message)
        self.point = point
        self.time = time


class IntegrationFailure(LinSDEError):
    """The ODE integrator could not advance to the requested time."""

    def __init__(self, message, last_time=None):
        super().__init__(message)
        self.last_time = last_time


class SingularGradientError(LinSDEError):
    """Flow-map gradient is numerically singular at a quadrature node."""

    def __init__(self, message, node_time=None):
        super().__init__(message)
        self.node_time = node_time


class CovarianceError(LinSDEError):
    """A covariance matrix violates symmetry or positive semi-definiteness."""


class BatchError(LinSDEError):
    """Too many Monte-Carlo samples were flagged as non-finite."""


class FieldError(LinSDEError):
    """Too many grid nodes failed during a field computation."""


class ConfigError(LinSDEError):
    """Invalid run configuration, annotated with the offending field path."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path
