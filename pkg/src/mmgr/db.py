"""Single-file embedded relational store (sqlite) with nested transactions.

One connection guarded by a re-entrant lock gives serializable behavior:
any two concurrent calls are equivalent to some serial order. `tx()` nests
via savepoints, so a whole tuning job can commit or roll back atomically
even though it is built from smaller transactional operations.
"""

from __future__ import annotations

import sqlite3
import threading
from contextlib import contextmanager
from pathlib import Path

SCHEMA = """
CREATE TABLE IF NOT EXISTS counters (
    name TEXT PRIMARY KEY,
    value INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS artifacts (
    id TEXT PRIMARY KEY,
    kind TEXT NOT NULL,
    created_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS datasets (
    id TEXT PRIMARY KEY,
    name TEXT NOT NULL UNIQUE,
    description TEXT NOT NULL DEFAULT '',
    created_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS snapshots (
    id TEXT PRIMARY KEY,
    dataset_id TEXT NOT NULL REFERENCES datasets(id),
    blob_hash TEXT NOT NULL,
    blob_size INTEGER NOT NULL,
    schema_json TEXT NOT NULL,
    row_count INTEGER NOT NULL,
    created_at TEXT NOT NULL,
    parent_id TEXT REFERENCES snapshots(id)
);
CREATE INDEX IF NOT EXISTS idx_snapshots_dataset ON snapshots(dataset_id);
CREATE TABLE IF NOT EXISTS lineage (
    from_id TEXT NOT NULL,
    to_id TEXT NOT NULL,
    kind TEXT NOT NULL,
    annotation TEXT,
    created_at TEXT NOT NULL,
    PRIMARY KEY (from_id, to_id, kind)
);
CREATE INDEX IF NOT EXISTS idx_lineage_from ON lineage(from_id, kind);
CREATE INDEX IF NOT EXISTS idx_lineage_to ON lineage(to_id, kind);
CREATE TABLE IF NOT EXISTS models (
    id TEXT PRIMARY KEY,
    name TEXT NOT NULL,
    version INTEGER NOT NULL,
    artifact_hash TEXT NOT NULL,
    artifact_size INTEGER NOT NULL,
    features_json TEXT NOT NULL,
    target TEXT NOT NULL,
    train_residual_std REAL NOT NULL,
    status TEXT NOT NULL,
    created_by_run TEXT NOT NULL,
    predecessor TEXT,
    created_at TEXT NOT NULL,
    UNIQUE (name, version)
);
CREATE TABLE IF NOT EXISTS runs (
    id TEXT PRIMARY KEY,
    algorithm TEXT NOT NULL,
    hyperparameters TEXT NOT NULL,
    framework_name TEXT NOT NULL,
    framework_version TEXT NOT NULL,
    input_snapshot TEXT NOT NULL REFERENCES snapshots(id),
    train_fraction REAL NOT NULL,
    seed INTEGER NOT NULL,
    started_at TEXT NOT NULL,
    finished_at TEXT NOT NULL,
    produced_model TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS evaluations (
    id TEXT NOT NULL,
    model_id TEXT NOT NULL,
    snapshot_id TEXT NOT NULL,
    rmse REAL NOT NULL,
    mae REAL NOT NULL,
    r2 REAL NOT NULL,
    n INTEGER NOT NULL,
    evaluated_at TEXT NOT NULL,
    PRIMARY KEY (model_id, snapshot_id)
);
CREATE TABLE IF NOT EXISTS evaluation_skips (
    model_id TEXT NOT NULL,
    snapshot_id TEXT NOT NULL,
    reason TEXT NOT NULL,
    recorded_at TEXT NOT NULL,
    PRIMARY KEY (model_id, snapshot_id)
);
CREATE TABLE IF NOT EXISTS gate_verdicts (
    id TEXT PRIMARY KEY,
    model_id TEXT NOT NULL,
    predecessor_id TEXT,
    epsilon REAL NOT NULL,
    overall INTEGER NOT NULL,
    checks_json TEXT NOT NULL,
    created_at TEXT NOT NULL
);
CREATE INDEX IF NOT EXISTS idx_verdicts_model ON gate_verdicts(model_id, id);
CREATE TABLE IF NOT EXISTS bundles (
    model_id TEXT PRIMARY KEY,
    blob_hash TEXT NOT NULL,
    blob_size INTEGER NOT NULL,
    created_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS deployments (
    id TEXT PRIMARY KEY,
    model_id TEXT NOT NULL,
    bundle_hash TEXT NOT NULL,
    target TEXT NOT NULL,
    deployed_at TEXT NOT NULL,
    active INTEGER NOT NULL,
    delta REAL NOT NULL,
    lambda REAL NOT NULL,
    delta_override REAL,
    lambda_override REAL,
    auto_tune INTEGER NOT NULL,
    superseded_by TEXT
);
CREATE INDEX IF NOT EXISTS idx_deployments_target ON deployments(target, active);
CREATE TABLE IF NOT EXISTS drift_states (
    deployment_id TEXT PRIMARY KEY,
    epoch INTEGER NOT NULL,
    n INTEGER NOT NULL,
    mean_abs_err REAL NOT NULL,
    ph_m REAL NOT NULL,
    ph_min REAL NOT NULL,
    alarm INTEGER NOT NULL,
    alarm_at INTEGER
);
CREATE TABLE IF NOT EXISTS feedback (
    deployment_id TEXT NOT NULL,
    epoch INTEGER NOT NULL,
    seq INTEGER NOT NULL,
    features_json TEXT NOT NULL,
    prediction REAL NOT NULL,
    observation REAL NOT NULL,
    ts TEXT NOT NULL,
    PRIMARY KEY (deployment_id, epoch, seq)
);
CREATE TABLE IF NOT EXISTS jobs (
    id TEXT PRIMARY KEY,
    dedup_key TEXT NOT NULL UNIQUE,
    trigger TEXT NOT NULL,
    source_model TEXT NOT NULL,
    target_snapshot TEXT,
    deployment_id TEXT,
    alarm_at INTEGER,
    result_name TEXT NOT NULL,
    ridge REAL NOT NULL,
    tau REAL NOT NULL,
    window INTEGER,
    status TEXT NOT NULL,
    result_model TEXT,
    result_verdict TEXT,
    failure TEXT,
    created_at TEXT NOT NULL,
    updated_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS notifications (
    id TEXT PRIMARY KEY,
    kind TEXT NOT NULL,
    subject TEXT NOT NULL,
    message TEXT NOT NULL,
    created_at TEXT NOT NULL
);
"""


class Database:
    def __init__(self, path: Path | str):
        self._conn = sqlite3.connect(str(path), check_same_thread=False, isolation_level=None)
        self._conn.row_factory = sqlite3.Row
        self._conn.execute("PRAGMA journal_mode=WAL")
        self._conn.execute("PRAGMA foreign_keys=ON")
        self._lock = threading.RLock()
        self._depth = 0
        with self._lock:
            self._conn.executescript(SCHEMA)

    @contextmanager
    def tx(self):
        """Transaction scope; nested scopes become savepoints."""
        with self._lock:
            depth = self._depth
            if depth == 0:
                self._conn.execute("BEGIN IMMEDIATE")
            else:
                self._conn.execute(f"SAVEPOINT sp{depth}")
            self._depth = depth + 1
            try:
                yield self._conn
            except BaseException:
                if depth == 0:
                    self._conn.execute("ROLLBACK")
                else:
                    self._conn.execute(f"ROLLBACK TO sp{depth}")
                    self._conn.execute(f"RELEASE sp{depth}")
                raise
            else:
                if depth == 0:
                    self._conn.execute("COMMIT")
                else:
                    self._conn.execute(f"RELEASE sp{depth}")
            finally:
                self._depth = depth

    def query(self, sql: str, params: tuple = ()) -> list[sqlite3.Row]:
        with self._lock:
            return self._conn.execute(sql, params).fetchall()

    def query_one(self, sql: str, params: tuple = ()) -> sqlite3.Row | None:
        with self._lock:
            return self._conn.execute(sql, params).fetchone()

    def next_id(self, prefix: str) -> str:
        """Monotone per-prefix identifier, e.g. model-3; only valid inside tx()."""
        with self._lock:
            row = self._conn.execute(
                "SELECT value FROM counters WHERE name = ?", (prefix,)
            ).fetchone()
            value = (row["value"] if row else 0) + 1
            self._conn.execute(
                "INSERT INTO counters(name, value) VALUES(?, ?) "
                "ON CONFLICT(name) DO UPDATE SET value = excluded.value",
                (prefix, value),
            )
            return f"{prefix}-{value}"

    def close(self) -> None:
        with self._lock:
            self._conn.close()
