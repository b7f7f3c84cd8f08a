"""Exception hierarchy shared by all pipeline stages."""


class Gastro3DError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(Gastro3DError, ValueError):
    """An argument violates a documented precondition."""


class OutOfModelError(Gastro3DError):
    """A point lies outside the projectable field of view."""


class NumericalError(Gastro3DError):
    """An iterative numerical procedure failed to converge."""


class InsufficientDataError(Gastro3DError):
    """Not enough observations to run the requested estimation."""


class ConvergenceError(Gastro3DError):
    """Optimization diverged; carries the last iterate for inspection.

    Attributes:
        last_iterate: Best/last parameter state before failure (opaque).
    """

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class DegenerateConfigurationError(Gastro3DError):
    """Input geometry is degenerate (collinear, rank-deficient, ...)."""


class InitializationError(Gastro3DError):
    """Two-view SfM initialization failed; names the best pair found.

    Attributes:
        best_pair: (image_id, image_id) of the highest-scoring rejected
            pair, or None when no pair had enough matches.
    """

    def __init__(self, message, best_pair=None):
        super().__init__(message)
        self.best_pair = best_pair


class RegistrationError(Gastro3DError):
    """A single image could not be registered (skipped, may be retried)."""


class ReconstructionError(Gastro3DError):
    """Surface reconstruction produced no usable output."""


class ExportError(Gastro3DError):
    """An on-disk artifact could not be written or is incomplete."""


class ConfigError(Gastro3DError):
    """Configuration file or flag values are invalid."""
