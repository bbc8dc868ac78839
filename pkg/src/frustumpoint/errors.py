"""Shared exception types."""

from __future__ import annotations


class FrustumPointError(Exception):
    """Base class for every error raised by this package."""


class ParseError(FrustumPointError):
    """A text artifact failed to parse.

    ``line`` is the 1-based line number when known.
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(FrustumPointError):
    """A run configuration is missing, malformed, or inconsistent."""


class DatasetError(FrustumPointError):
    """A dataset root or one of its index files is unusable."""
