"""Error taxonomy shared by every subsystem.

Each error carries a closed machine-readable code; the HTTP layer derives
response status from the code and nothing else.
"""

from __future__ import annotations

from typing import Any, Mapping


class MmgrError(Exception):
    """Base class; `code` is one of the closed set below."""

    code = "validation"

    def __init__(self, message: str, detail: Mapping[str, Any] | None = None):
        super().__init__(message)
        self.message = message
        self.detail: dict[str, Any] = dict(detail or {})

    def envelope(self) -> dict[str, Any]:
        return {"code": self.code, "message": self.message, "detail": self.detail}


class NotFoundError(MmgrError):
    code = "not_found"


class ValidationError(MmgrError):
    code = "validation"


class StateError(MmgrError):
    code = "state"


class CycleError(MmgrError):
    code = "cycle"


class SchemaError(MmgrError):
    code = "schema"


class CorruptionError(MmgrError):
    code = "corruption"


class OrderingError(MmgrError):
    code = "ordering"


class UnsupportedError(MmgrError):
    code = "unsupported"


class InconclusiveError(MmgrError):
    code = "inconclusive"


class StoreIOError(CorruptionError):
    """I/O failure in blob storage; retriable, unlike a hash mismatch."""

    def __init__(self, message: str, detail: Mapping[str, Any] | None = None):
        merged = {"retriable": True}
        merged.update(detail or {})
        super().__init__(message, merged)


ERROR_CODES = (
    "not_found",
    "validation",
    "state",
    "cycle",
    "schema",
    "corruption",
    "ordering",
    "unsupported",
    "inconclusive",
)

HTTP_STATUS_BY_CODE = {
    "not_found": 404,
    "validation": 422,
    "schema": 422,
    "ordering": 422,
    "state": 409,
    "cycle": 409,
    "inconclusive": 409,
    "corruption": 500,
    "unsupported": 501,
}
