"""Shared exception types."""


class ValidationError(ValueError):
    """A config or file failed validation; message names the offending field."""


class SnapshotMismatchError(ValueError):
    """A simulator snapshot was restored into an incompatible environment."""
