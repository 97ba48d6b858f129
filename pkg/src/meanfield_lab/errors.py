"""Error types shared across the package."""


class MeanfieldLabError(Exception):
    """Base class for package errors."""


class ConfigError(MeanfieldLabError):
    """Invalid configuration; message lists offending keys with paths."""


class GridResolutionError(MeanfieldLabError):
    """Grid too small or too coarse for the requested computation."""


class UnstableError(MeanfieldLabError):
    """Minimization refused: the functional is unbounded below."""


class DimensionGuardError(MeanfieldLabError):
    """Requested object exceeds the desk-scale dimension cap."""


class NoConvergenceError(MeanfieldLabError):
    """Iterative solver exhausted its budget; best iterate attached."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
