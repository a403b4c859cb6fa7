"""Exception hierarchy used across the package."""


class CrossDiffError(Exception):
    """Base class for all errors raised by crossdiff."""


class DomainError(CrossDiffError, ValueError):
    """An argument lies outside the domain of the function."""


class UnsupportedReactionError(CrossDiffError):
    pass


class StructureError(CrossDiffError):
    """No entropy structure could be assembled for the model."""

    def __init__(self, message, violated_cycle=None):
        super().__init__(message)
        self.violated_cycle = violated_cycle


class InversionError(CrossDiffError):
    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class StepError(CrossDiffError):
    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class DiagnosticViolation(CrossDiffError):
    """A hard a priori estimate failed on the discrete trajectory (strict mode)."""

    def __init__(self, message, k=None, flags=None):
        super().__init__(message)
        self.k = k
        self.flags = flags or {}


class InsufficientDataError(CrossDiffError):
    pass


class ConfigError(CrossDiffError):
    pass
