"""Shared exception types."""


class LatqError(Exception):
    """Base class for toolkit errors."""


class FormatError(LatqError):
    """A file or byte stream violates one of the documented formats."""


class InstanceTooLarge(LatqError):
    """An exhaustive-search guard was exceeded."""
