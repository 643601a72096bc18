"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Array shapes are inconsistent with the operation."""


class ConfigurationError(ValueError):
    """A configuration value is invalid or inconsistent."""


class InputError(ValueError):
    """An input is empty or otherwise unusable."""


class ConsistencyError(RuntimeError):
    """An internal invariant was violated. Always a bug."""
