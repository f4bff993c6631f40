"""Exception types shared across the package."""


class TexelFuseError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(TexelFuseError):
    """Invalid configuration value or command-line usage."""


class DataError(TexelFuseError):
    """Missing, malformed, or mutually inconsistent input data."""


class CapacityError(TexelFuseError):
    """A requested allocation exceeds the configured memory budget."""
