"""Exception types shared across the package."""


class JointVSError(Exception):
    """Base class for all package errors."""


class DataError(JointVSError):
    """Malformed or inconsistent input data."""


class ConfigError(JointVSError):
    """Invalid configuration value or file."""


class DimensionError(DataError):
    """Array dimensions do not match the declared model structure."""


class NumericalError(JointVSError):
    """A numerical routine produced NaN or failed to converge fatally."""
