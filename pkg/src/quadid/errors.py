"""Exception types shared across the toolkit."""


class QuadIdError(Exception):
    """Base class for all toolkit errors."""


class DomainError(QuadIdError):
    """An operation received values outside its mathematical domain."""


class ConfigError(QuadIdError):
    """Invalid or inconsistent configuration."""


class DataError(QuadIdError):
    """A dataset is too short, empty, or otherwise unusable."""


class IdentifiabilityError(QuadIdError):
    """The regression problem is rank deficient or the instruments are singular."""


class EstimationError(QuadIdError):
    """An iterative estimator failed to converge or was misused."""

    def __init__(self, message, best_model=None):
        super().__init__(message)
        self.best_model = best_model


class DivergenceError(QuadIdError):
    """A simulated trajectory exceeded the magnitude bound."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class DesignError(QuadIdError):
    """A controller design problem is infeasible or did not converge."""


class PipelineError(QuadIdError):
    """A batch run could not produce the requested artifact."""


class RetuneError(PipelineError):
    """No stabilizing gain set was found during re-tuning."""
