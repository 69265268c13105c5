"""Exception hierarchy shared by all psido modules."""


class PsidoError(Exception):
    """Base class for library errors."""


class InvalidFrame(PsidoError):
    """Frame basis is singular or malformed."""


class DomainError(PsidoError):
    """Point lies outside the numerically safe domain of a chart."""


class NumericError(PsidoError, ArithmeticError):
    """Non-finite values or a failed numerical procedure."""


class InverseFailure(NumericError):
    """An iterative inversion did not converge."""


class CapExceeded(PsidoError, ValueError):
    """Requested order exceeds a configured cap."""


class InvalidSample(PsidoError, ValueError):
    """Sample data unsuitable for fitting."""


class GridMismatch(PsidoError, ValueError):
    """Grids of the operands are incompatible."""


class HypothesisViolation(PsidoError):
    """The model does not satisfy a hypothesis required by the operation."""


class ResolutionError(PsidoError):
    """Sampled function is under-resolved on its grid."""


class ConfigError(PsidoError, ValueError):
    """Invalid run configuration."""
