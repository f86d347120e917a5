"""Exception hierarchy shared by all modules.

Each top-level class maps onto one CLI exit code.
"""


class GhostbeamError(Exception):
    exit_code = 1


class ConfigError(GhostbeamError, ValueError):
    exit_code = 2


class GeometryError(GhostbeamError, ValueError):
    exit_code = 3


class NumericalQualityError(GhostbeamError, RuntimeError):
    exit_code = 4


class SamplingError(NumericalQualityError):
    """Grid too coarse, or aliasing detected in strict mode."""


class TruncationError(NumericalQualityError):
    """A quadrature domain does not cover the integrand's support."""


class PreconditionError(GhostbeamError, ValueError):
    pass


class SamplingWarning(UserWarning):
    pass


class RegimeWarning(UserWarning):
    pass
