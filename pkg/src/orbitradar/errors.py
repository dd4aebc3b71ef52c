"""Exception types raised by the processing chain."""


class GeometryError(ValueError):
    """Degenerate or singular geometry (zero range, zenith azimuth, ...)."""


class ConvergenceError(RuntimeError):
    """An iterative fit failed to converge.

    The last iterate is kept on ``estimate`` so callers can still report it.
    """

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class UnderdeterminedError(ValueError):
    """A linear system lacks the rank needed for a unique solution."""

    def __init__(self, message, nullity=None):
        super().__init__(message)
        self.nullity = nullity


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class ReentryWarning(UserWarning):
    """A propagated trajectory dipped below the Earth's surface."""
