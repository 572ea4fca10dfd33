"""Deterministic deployment bundles.

A bundle is an uncompressed USTAR archive holding `manifest.json` (canonical
JSON) and `model.bin`, written with fixed metadata (mtime 0, uid/gid 0, mode
0644, sorted paths) so building twice from the same inputs yields identical
bytes. The manifest lists a SHA-256 for every other file and pins the
compatible edge-agent version range.
"""

from __future__ import annotations

import hashlib
import io
import re
import tarfile
from dataclasses import dataclass

from .canonical import canonical_json_bytes
from .errors import CorruptionError, UnsupportedError, ValidationError

BUNDLE_FORMAT_VERSION = "1"
MANIFEST_PATH = "manifest.json"
MODEL_PATH = "model.bin"
DEFAULT_RUNTIME_RANGE = ">=1.0.0,<2.0.0"

_RANGE_RE = re.compile(r"^>=(\d+)\.(\d+)\.(\d+),<(\d+)\.(\d+)\.(\d+)$")
_VERSION_RE = re.compile(r"^(\d+)\.(\d+)\.(\d+)$")


def parse_version(version: str) -> tuple[int, int, int]:
    m = _VERSION_RE.match(version)
    if not m:
        raise ValidationError(f"bad semantic version {version!r}")
    return (int(m.group(1)), int(m.group(2)), int(m.group(3)))


def parse_version_range(spec: str) -> tuple[tuple[int, int, int], tuple[int, int, int]]:
    """Only the `>=a.b.c,<d.e.f` form is accepted."""
    m = _RANGE_RE.match(spec)
    if not m:
        raise ValidationError(f"bad runtime version range {spec!r}")
    lo = (int(m.group(1)), int(m.group(2)), int(m.group(3)))
    hi = (int(m.group(4)), int(m.group(5)), int(m.group(6)))
    if not lo < hi:
        raise ValidationError(f"empty runtime version range {spec!r}")
    return lo, hi


def version_satisfies(version: str, spec: str) -> bool:
    lo, hi = parse_version_range(spec)
    return lo <= parse_version(version) < hi


@dataclass(frozen=True)
class BundleManifest:
    format_version: str
    model_id: str
    model_blob: str
    model_format: str
    features: tuple[str, ...]
    target: str
    runtime_range: str
    metrics: dict
    monitoring: dict
    checksums: dict
    created_at: str

    def as_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "model_id": self.model_id,
            "model_blob": self.model_blob,
            "model_format": self.model_format,
            "input_schema": {"features": list(self.features), "target": self.target},
            "runtime_range": self.runtime_range,
            "metrics": self.metrics,
            "monitoring": self.monitoring,
            "checksums": self.checksums,
            "created_at": self.created_at,
        }


def _tar_member(name: str, content: bytes) -> tarfile.TarInfo:
    info = tarfile.TarInfo(name=name)
    info.size = len(content)
    info.mtime = 0
    info.uid = 0
    info.gid = 0
    info.uname = ""
    info.gname = ""
    info.mode = 0o644
    return info


def _write_archive(members: dict[str, bytes]) -> bytes:
    out = io.BytesIO()
    with tarfile.open(fileobj=out, mode="w", format=tarfile.USTAR_FORMAT) as tar:
        for name in sorted(members):
            content = members[name]
            tar.addfile(_tar_member(name, content), io.BytesIO(content))
    return out.getvalue()


def build_archive(manifest: dict, files: dict[str, bytes]) -> bytes:
    """Assemble the deterministic archive; fills in the checksum map."""
    checksums = {
        name: hashlib.sha256(content).hexdigest() for name, content in sorted(files.items())
    }
    manifest = dict(manifest)
    manifest["checksums"] = checksums
    members = dict(files)
    members[MANIFEST_PATH] = canonical_json_bytes(manifest)
    return _write_archive(members)


def build_bundle_archive(
    *,
    model_id: str,
    model_bytes: bytes,
    model_blob_hash: str,
    model_format: str,
    features: list[str],
    target: str,
    metrics: dict,
    monitoring: dict,
    created_at: str,
    runtime_range: str = DEFAULT_RUNTIME_RANGE,
) -> bytes:
    parse_version_range(runtime_range)
    manifest = {
        "format_version": BUNDLE_FORMAT_VERSION,
        "model_id": model_id,
        "model_blob": model_blob_hash,
        "model_format": model_format,
        "input_schema": {"features": list(features), "target": target},
        "runtime_range": runtime_range,
        "metrics": metrics,
        "monitoring": monitoring,
        "created_at": created_at,
    }
    return build_archive(manifest, {MODEL_PATH: model_bytes})


def read_bundle(archive: bytes) -> tuple[dict, dict[str, bytes]]:
    """Extract raw manifest dict and member bytes without verification."""
    try:
        with tarfile.open(fileobj=io.BytesIO(archive), mode="r:") as tar:
            members = {}
            for info in tar.getmembers():
                if not info.isfile():
                    raise CorruptionError(f"unexpected non-file member {info.name!r}")
                members[info.name] = tar.extractfile(info).read()
    except tarfile.TarError as exc:
        raise CorruptionError(f"unreadable bundle archive: {exc}")
    if MANIFEST_PATH not in members:
        raise ValidationError("bundle has no manifest.json")
    import json

    try:
        manifest = json.loads(members[MANIFEST_PATH].decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise CorruptionError(f"bundle manifest is not valid JSON: {exc}")
    if not isinstance(manifest, dict):
        raise CorruptionError("bundle manifest is not an object")
    return manifest, members


def verify_bundle(archive: bytes, expected_hash: str | None = None) -> BundleManifest:
    """Full integrity check; returns the parsed manifest only if everything
    holds.

    With `expected_hash` (the bundle's content address) any single-byte
    mutation is detectable; without it, verification still covers archive
    canonical form, manifest checksums, and structural validity.
    """
    if expected_hash is not None:
        actual = hashlib.sha256(archive).hexdigest()
        if actual != expected_hash:
            raise CorruptionError(
                "bundle bytes do not match their content address",
                {"expected": expected_hash, "actual": actual},
            )
    manifest, members = read_bundle(archive)

    version = manifest.get("format_version")
    if version != BUNDLE_FORMAT_VERSION:
        raise UnsupportedError(
            f"unsupported bundle format_version {version!r}", {"format_version": version}
        )
    for key in ("model_id", "model_blob", "model_format", "input_schema", "runtime_range",
                "checksums", "created_at"):
        if key not in manifest:
            raise ValidationError(f"bundle manifest lacks {key!r}")
    checksums = manifest["checksums"]
    if not isinstance(checksums, dict):
        raise ValidationError("bundle checksum map is not an object")
    if MANIFEST_PATH in checksums:
        raise ValidationError("manifest must not list itself in the checksum map")
    for path, digest in checksums.items():
        if path not in members:
            raise ValidationError(
                f"incomplete bundle: manifest lists missing file {path!r}", {"path": path}
            )
        actual = hashlib.sha256(members[path]).hexdigest()
        if actual != digest:
            raise CorruptionError(
                f"checksum mismatch for {path!r}",
                {"path": path, "expected": digest, "actual": actual},
            )
    unlisted = set(members) - set(checksums) - {MANIFEST_PATH}
    if unlisted:
        raise CorruptionError(
            "bundle contains files missing from the checksum map: "
            + ", ".join(sorted(unlisted)),
            {"paths": sorted(unlisted)},
        )
    parse_version_range(manifest["runtime_range"])

    # canonical-form check: rebuilding from the parsed members must reproduce
    # the archive bit-for-bit, which catches padding and header tampering
    rebuilt = _write_archive(members)
    if rebuilt != archive:
        raise CorruptionError("bundle archive is not in canonical form")
    if members[MANIFEST_PATH] != canonical_json_bytes(manifest):
        raise CorruptionError("bundle manifest is not canonical JSON")

    schema = manifest["input_schema"]
    if (
        not isinstance(schema, dict)
        or not isinstance(schema.get("features"), list)
        or not isinstance(schema.get("target"), str)
    ):
        raise ValidationError("bundle input_schema is malformed")
    return BundleManifest(
        format_version=manifest["format_version"],
        model_id=manifest["model_id"],
        model_blob=manifest["model_blob"],
        model_format=manifest["model_format"],
        features=tuple(schema["features"]),
        target=schema["target"],
        runtime_range=manifest["runtime_range"],
        metrics=manifest.get("metrics", {}),
        monitoring=manifest.get("monitoring", {}),
        checksums=dict(checksums),
        created_at=manifest["created_at"],
    )
