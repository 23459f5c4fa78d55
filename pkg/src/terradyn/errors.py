"""Exception types shared across the package."""


class TerradynError(Exception):
    """Base class for all package errors."""


class ConfigError(TerradynError):
    """Invalid configuration (non-positive dimension, bad layer name, ...)."""


class OutOfBoundsError(TerradynError):
    """Terrain query left the grid extent under the hard-error policy."""


class NonFiniteError(TerradynError):
    """A state or gradient component overflowed or became NaN."""


class TapeOverflowError(TerradynError):
    """Recorded graph exceeded the configured node budget."""


class EmptyOverlapError(TerradynError):
    """Two trajectories share no common time range."""


class AllMaskedError(TerradynError):
    """Masked grid loss received an all-zero weight mask."""


class DegenerateTangentError(TerradynError):
    """Robot forward axis is parallel to the terrain normal."""


class DivergedError(TerradynError):
    """Identification loss exceeded the divergence threshold repeatedly."""


class NonPositiveDepthError(TerradynError):
    """Pixel lifting requires a strictly positive depth."""
