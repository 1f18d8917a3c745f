"""
Exception hierarchy for brlab.

Every error carries a machine-readable payload so the CLI can emit it as JSON
without string parsing.
"""

from typing import Any


class BrlabError(Exception):
    """Base class for all errors raised by brlab."""

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self) -> dict[str, Any]:
        return {
            "error": type(self).__name__,
            "message": self.message,
            "details": {k: _plain(v) for k, v in self.details.items()},
        }


class InvalidInputError(BrlabError):
    """A precondition of an operation does not hold."""


class ResourceLimitError(BrlabError):
    """An enumeration or closure would exceed its configured cap."""


class SymmetryError(BrlabError):
    """Data is not compatible with the group action it claims."""


class ConsistencyError(BrlabError):
    """Two computations of the same quantity disagree."""


class ConstructionError(BrlabError):
    """A constructive correspondence failed its own verification."""


def _plain(value: Any) -> Any:
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    try:
        return float(value)
    except (TypeError, ValueError):
        return str(value)
