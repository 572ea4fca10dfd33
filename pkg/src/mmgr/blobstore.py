"""Content-addressed, immutable blob storage.

Blobs live under a two-level fan-out directory keyed by SHA-256 prefix
(`ab/cd/abcd...`). Writes are write-temp-then-rename, so concurrent puts of
identical content converge on one file. Reads re-hash and fail loudly on
mismatch, which distinguishes corruption from absence.
"""

from __future__ import annotations

import hashlib
import os
import re
import uuid
from dataclasses import dataclass
from pathlib import Path

from .errors import CorruptionError, NotFoundError, StoreIOError, ValidationError

_HASH_RE = re.compile(r"^[0-9a-f]{64}$")


@dataclass(frozen=True)
class BlobRef:
    hash: str
    size: int

    def as_dict(self) -> dict:
        return {"hash": self.hash, "size": self.size}


def sha256_hex(content: bytes) -> str:
    return hashlib.sha256(content).hexdigest()


class BlobStore:
    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, digest: str) -> Path:
        return self.root / digest[:2] / digest[2:4] / digest

    def put(self, content: bytes) -> BlobRef:
        """Store bytes, returning their content address; idempotent."""
        digest = sha256_hex(content)
        ref = BlobRef(hash=digest, size=len(content))
        path = self._path(digest)
        if path.exists():
            return ref
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.parent / f".tmp-{uuid.uuid4().hex}"
            tmp.write_bytes(content)
            os.replace(tmp, path)
        except OSError as exc:
            raise StoreIOError(f"blob write failed: {exc}")
        return ref

    def get(self, digest: str) -> bytes:
        if not _HASH_RE.match(digest):
            raise ValidationError(f"malformed blob hash: {digest!r}")
        path = self._path(digest)
        if not path.exists():
            raise NotFoundError(f"no blob {digest}", {"hash": digest})
        try:
            content = path.read_bytes()
        except OSError as exc:
            raise StoreIOError(f"blob read failed: {exc}")
        actual = sha256_hex(content)
        if actual != digest:
            raise CorruptionError(
                f"blob {digest} failed read verification",
                {"hash": digest, "actual": actual},
            )
        return content

    def exists(self, digest: str) -> bool:
        return _HASH_RE.match(digest) is not None and self._path(digest).exists()

    def ref(self, digest: str) -> BlobRef:
        """BlobRef for an already-stored blob (size from disk, hash trusted)."""
        if not self.exists(digest):
            raise NotFoundError(f"no blob {digest}", {"hash": digest})
        return BlobRef(hash=digest, size=self._path(digest).stat().st_size)
