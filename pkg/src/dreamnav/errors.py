"""Exception taxonomy shared across the package."""


class DreamnavError(Exception):
    """Base class for all package errors."""


class ConfigError(DreamnavError):
    """Invalid configuration or incompatible shapes/geometry."""


class TrainError(DreamnavError):
    """Numerical failure during training (non-finite loss or gradient)."""


class FormatError(DreamnavError):
    """Corrupt or malformed on-disk file."""
