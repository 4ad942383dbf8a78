"""Exception types shared across the toolkit."""


class HubmtError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(HubmtError):
    """Invalid or inconsistent configuration."""


class InputError(HubmtError):
    """Invalid runtime input (empty corpus, bad request, ...)."""


class FormatError(HubmtError):
    """Malformed file contents; message names the offending line."""


class DataError(HubmtError):
    """Batch data violates a contract (e.g. gold label outside the mask)."""


class TrainingError(HubmtError):
    """Non-finite gradients/updates or a broken training invariant."""


class NumericalError(HubmtError):
    """Degenerate numerical input (all-zero matrices, zero norms)."""


class EvaluationError(HubmtError):
    """Evaluation cannot proceed (e.g. no usable dictionary pairs)."""


class OptimizationError(HubmtError):
    """Optimization diverged. Carries the last finite iterate when known."""

    def __init__(self, message: str, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate
