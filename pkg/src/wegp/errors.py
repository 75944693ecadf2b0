"""Exception hierarchy shared across the package."""


class WegpError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(WegpError, ValueError):
    """Array shapes or lengths do not agree."""


class ValidationError(WegpError, ValueError):
    """An input violates a documented precondition."""


class DomainError(WegpError, ValueError):
    """A value lies outside its admissible domain."""


class BasisExhaustionError(WegpError):
    """Could not assemble the requested number of independent base EDMs."""

    def __init__(self, message, rank_achieved):
        super().__init__(message)
        self.rank_achieved = rank_achieved


class ConditioningError(WegpError):
    """Cholesky factorization failed at every rung of the jitter ladder."""

    def __init__(self, message, ladder):
        super().__init__(message)
        self.ladder = tuple(ladder)


class SamplerHealthError(WegpError):
    """Too many divergent transitions after warmup."""

    def __init__(self, message, diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class OptimizationError(WegpError):
    """Every restart of the MAP optimizer failed."""


class UndefinedMetricError(WegpError, ValueError):
    """A metric is undefined for the given inputs (e.g. constant truth)."""


class ConfigError(WegpError):
    """An experiment configuration is malformed or references unknown names."""


class ObjectiveError(WegpError):
    """The black-box objective raised; carries the partial optimization state."""

    def __init__(self, message, state):
        super().__init__(message)
        self.state = state
