"""Dataset and snapshot management on top of the blob store.

Snapshots are immutable versions of a tabular dataset: the parsed table is
canonically encoded, content-addressed, and registered. Re-ingesting equal
data yields a new snapshot id sharing the same blob.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timezone

from .blobstore import BlobRef, BlobStore
from .db import Database
from .errors import CorruptionError, NotFoundError, StateError
from .tabular import Table, decode_table, encode_table, parse_csv


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass(frozen=True)
class Dataset:
    id: str
    name: str
    description: str
    created_at: str
    snapshot_ids: tuple[str, ...]

    def as_dict(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "description": self.description,
            "created_at": self.created_at,
            "snapshots": list(self.snapshot_ids),
        }


@dataclass(frozen=True)
class Snapshot:
    id: str
    dataset_id: str
    blob: BlobRef
    schema: tuple[tuple[str, str], ...]
    row_count: int
    created_at: str
    parent_snapshot: str | None

    def as_dict(self) -> dict:
        return {
            "id": self.id,
            "dataset_id": self.dataset_id,
            "blob": self.blob.as_dict(),
            "schema": [[n, t] for n, t in self.schema],
            "row_count": self.row_count,
            "created_at": self.created_at,
            "parent_snapshot": self.parent_snapshot,
        }


class SnapshotStore:
    def __init__(self, db: Database, blobs: BlobStore):
        self.db = db
        self.blobs = blobs

    # -- datasets ---------------------------------------------------------

    def create_dataset(self, name: str, description: str = "") -> Dataset:
        if not name:
            raise StateError("dataset name must be non-empty")
        with self.db.tx() as conn:
            if self.db.query_one("SELECT 1 FROM datasets WHERE name = ?", (name,)):
                raise StateError(f"dataset name {name!r} already exists", {"name": name})
            ds_id = self.db.next_id("ds")
            created = _now()
            conn.execute(
                "INSERT INTO datasets(id, name, description, created_at) VALUES(?,?,?,?)",
                (ds_id, name, description, created),
            )
            conn.execute(
                "INSERT INTO artifacts(id, kind, created_at) VALUES(?,?,?)",
                (ds_id, "dataset", created),
            )
        return Dataset(ds_id, name, description, created, ())

    def get_dataset(self, dataset_id: str) -> Dataset:
        row = self.db.query_one("SELECT * FROM datasets WHERE id = ?", (dataset_id,))
        if row is None:
            raise NotFoundError(f"no dataset {dataset_id}", {"dataset": dataset_id})
        snaps = self.db.query(
            "SELECT id FROM snapshots WHERE dataset_id = ? ORDER BY created_at, id",
            (dataset_id,),
        )
        return Dataset(
            row["id"],
            row["name"],
            row["description"],
            row["created_at"],
            tuple(r["id"] for r in snaps),
        )

    def find_dataset(self, name: str) -> Dataset:
        row = self.db.query_one("SELECT id FROM datasets WHERE name = ?", (name,))
        if row is None:
            raise NotFoundError(f"no dataset named {name!r}", {"name": name})
        return self.get_dataset(row["id"])

    def list_datasets(self) -> list[Dataset]:
        rows = self.db.query("SELECT id FROM datasets ORDER BY id")
        return [self.get_dataset(r["id"]) for r in rows]

    # -- snapshots --------------------------------------------------------

    def ingest_snapshot(
        self, dataset_id: str, csv_bytes: bytes, parent: str | None = None
    ) -> Snapshot:
        table = parse_csv(csv_bytes)
        return self.ingest_table(dataset_id, table, parent)

    def ingest_table(self, dataset_id: str, table: Table, parent: str | None = None) -> Snapshot:
        self.get_dataset(dataset_id)
        if parent is not None and not self.db.query_one(
            "SELECT 1 FROM snapshots WHERE id = ?", (parent,)
        ):
            raise NotFoundError(f"no parent snapshot {parent}", {"snapshot": parent})
        payload = encode_table(table)
        ref = self.blobs.put(payload)
        with self.db.tx() as conn:
            snap_id = self.db.next_id("snap")
            created = _now()
            conn.execute(
                "INSERT INTO snapshots(id, dataset_id, blob_hash, blob_size, schema_json, "
                "row_count, created_at, parent_id) VALUES(?,?,?,?,?,?,?,?)",
                (
                    snap_id,
                    dataset_id,
                    ref.hash,
                    ref.size,
                    json.dumps(table.schema),
                    table.row_count,
                    created,
                    parent,
                ),
            )
            conn.execute(
                "INSERT INTO artifacts(id, kind, created_at) VALUES(?,?,?)",
                (snap_id, "snapshot", created),
            )
        return Snapshot(
            id=snap_id,
            dataset_id=dataset_id,
            blob=ref,
            schema=tuple((n, t) for n, t in table.schema),
            row_count=table.row_count,
            created_at=created,
            parent_snapshot=parent,
        )

    def get_snapshot(self, snapshot_id: str) -> Snapshot:
        row = self.db.query_one("SELECT * FROM snapshots WHERE id = ?", (snapshot_id,))
        if row is None:
            raise NotFoundError(f"no snapshot {snapshot_id}", {"snapshot": snapshot_id})
        return Snapshot(
            id=row["id"],
            dataset_id=row["dataset_id"],
            blob=BlobRef(hash=row["blob_hash"], size=row["blob_size"]),
            schema=tuple((n, t) for n, t in json.loads(row["schema_json"])),
            row_count=row["row_count"],
            created_at=row["created_at"],
            parent_snapshot=row["parent_id"],
        )

    def materialize(self, snapshot_id: str) -> Table:
        snap = self.get_snapshot(snapshot_id)
        table = decode_table(self.blobs.get(snap.blob.hash))
        if table.row_count != snap.row_count:
            raise CorruptionError(
                f"snapshot {snapshot_id} payload row count mismatch",
                {"snapshot": snapshot_id},
            )
        return table

    def latest_snapshot(self, dataset_id: str) -> Snapshot:
        ds = self.get_dataset(dataset_id)
        if not ds.snapshot_ids:
            raise NotFoundError(f"dataset {dataset_id} has no snapshots", {"dataset": dataset_id})
        return self.get_snapshot(ds.snapshot_ids[-1])
