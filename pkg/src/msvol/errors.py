"""Exception hierarchy shared by every msvol module."""


class MsvolError(Exception):
    """Base class for all library errors."""


class DomainError(MsvolError, ValueError):
    """An input lies outside the domain of a formula (non-positive spot, sigma, ...)."""


class TerminalLayerError(DomainError):
    """A log-space derivative or expansion term was requested at tau = 0."""


class NoSolutionError(MsvolError, ValueError):
    """An inversion has no solution, e.g. a price outside the no-arbitrage bounds."""


class ConvergenceError(MsvolError, RuntimeError):
    """An iterative solver exhausted its iteration budget."""


class SchemaError(MsvolError, ValueError):
    """A JSON or CSV document does not match the declared schema."""


class CalibrationError(MsvolError, ValueError):
    """Calibration cannot proceed (empty chain, every quote dropped, ...)."""


class RankError(CalibrationError):
    """The stage-1 design matrix is numerically rank deficient."""

    def __init__(self, message, condition_number, deficient_directions):
        super().__init__(message)
        self.condition_number = condition_number
        self.deficient_directions = deficient_directions


class InfeasibleError(CalibrationError):
    """Stage-2 recovery found no point satisfying the coefficient constraints."""

    def __init__(self, message, best_residual):
        super().__init__(message)
        self.best_residual = best_residual


class ResolutionError(MsvolError, ValueError):
    """The Monte Carlo time step does not resolve the fast time scale."""


class ConfigError(MsvolError, ValueError):
    """A model configuration violates its invariants (non-PSD correlations, ...)."""


class QuadratureError(MsvolError, RuntimeError):
    """A quadrature failed to reach its tolerance."""


class GoldenError(MsvolError, RuntimeError):
    """A golden record is missing or stale and must be regenerated."""
