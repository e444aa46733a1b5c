"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`FedNEError`,
so callers (the CLI in particular) can map failures onto exit codes.
"""


class FedNEError(Exception):
    """Base class for all package errors."""


class ShapeError(FedNEError, ValueError):
    """Array or layout dimensions do not agree."""


class DataError(FedNEError, ValueError):
    """Input data is malformed, non-finite or too small for the request."""


class ConfigError(FedNEError, ValueError):
    """A configuration value is out of its valid range."""


class PartitionError(FedNEError, ValueError):
    """A requested client partition cannot be constructed."""
