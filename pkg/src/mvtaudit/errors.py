"""Exception hierarchy shared by every module.

Anything derived from :class:`ToolkitError` is a *domain* error: the CLI maps it
to exit code 1 and a one-line JSON message on stderr.
"""
from __future__ import annotations


class ToolkitError(Exception):
    """Base class for expected, user-facing failures."""

    code = "toolkit-error"


class InvalidDimensionError(ToolkitError, ValueError):
    code = "invalid-dimension"


class ConfigurationError(ToolkitError, ValueError):
    code = "configuration"


class ParseError(ToolkitError, ValueError):
    """Malformed input line. ``line`` is 1-based."""

    code = "parse"

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"line {line}: "
        elif where:
            where += " "
        super().__init__(where + message)


class LengthMismatchError(ToolkitError, ValueError):
    code = "length-mismatch"


class OracleUnavailableError(ToolkitError):
    """Exact enumeration refused because C(n, k) exceeds the cap."""

    code = "oracle-unavailable"


class InvalidRecordError(ToolkitError, ValueError):
    code = "invalid-record"


class InsufficientDataError(ToolkitError, ValueError):
    code = "insufficient-data"


class MissingDataError(ToolkitError, ValueError):
    """Missing or sentinel return values inside a requested window."""

    code = "missing-data"
