"""Exception types raised across the package."""


class GlassNetError(Exception):
    """Base class for all package errors."""


class DimensionError(GlassNetError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class ConfigurationError(GlassNetError, ValueError):
    """A configuration value makes the operation ill-defined."""


class UsageError(GlassNetError, RuntimeError):
    """An API was called in an unsupported way (e.g. backward on a non-scalar)."""


class CheckpointError(GlassNetError, RuntimeError):
    """A checkpoint could not be read or does not match the network."""


class DataError(GlassNetError, ValueError):
    """Dataset files or planes violate the on-disk conventions."""
