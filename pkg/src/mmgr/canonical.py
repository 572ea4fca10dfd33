"""Canonical JSON: sorted keys, no insignificant whitespace, UTF-8, no NaN.

Used for hyperparameter identity, bundle manifests, and all API response
bodies, so serializing the same value twice is byte-identical.
"""

from __future__ import annotations

import json
from typing import Any

from .errors import ValidationError


def canonical_json(obj: Any) -> str:
    try:
        return json.dumps(
            obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False
        )
    except ValueError as exc:
        raise ValidationError(f"value not representable as canonical JSON: {exc}")
    except TypeError as exc:
        raise ValidationError(f"value not JSON-serializable: {exc}")


def canonical_json_bytes(obj: Any) -> bytes:
    return canonical_json(obj).encode("utf-8")
