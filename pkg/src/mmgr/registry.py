"""System of record for models, training runs, evaluations, deployments,
tuning jobs and notifications.

Everything needed to re-run a built-in training is captured on the run row;
`reproduce_run` re-executes it and must return the original artifact hash.
All mutations happen inside the shared database transaction scope.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Mapping

from . import runtime
from .blobstore import BlobRef, BlobStore
from .canonical import canonical_json
from .db import Database
from .errors import (
    CorruptionError,
    NotFoundError,
    StateError,
    UnsupportedError,
    ValidationError,
)
from .lineage import ACYCLIC_KINDS, LineageGraph
from .store import SnapshotStore

MODEL_STATUSES = ("candidate", "validated", "deployed", "retired")
_LEGAL_TRANSITIONS = {
    "candidate": {"validated", "retired"},
    "validated": {"deployed", "retired"},
    "deployed": {"retired"},
    "retired": set(),
}
MAX_SEED = 2**63 - 1

JOB_TRIGGERS = ("drift_alarm", "new_base_model", "manual")
JOB_STATUSES = ("queued", "running", "succeeded", "failed", "cancelled")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass(frozen=True)
class TrainingRun:
    id: str
    algorithm: str
    hyperparameters: str  # canonical JSON
    framework_name: str
    framework_version: str
    input_snapshot: str
    train_fraction: float
    seed: int
    started_at: str
    finished_at: str
    produced_model: str

    def as_dict(self) -> dict:
        return {
            "id": self.id,
            "algorithm": self.algorithm,
            "hyperparameters": json.loads(self.hyperparameters),
            "framework": {"name": self.framework_name, "version": self.framework_version},
            "input_snapshot": self.input_snapshot,
            "train_fraction": self.train_fraction,
            "seed": self.seed,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "produced_model": self.produced_model,
        }


@dataclass(frozen=True)
class ModelRecord:
    id: str
    name: str
    version: int
    artifact: BlobRef
    features: tuple[str, ...]
    target: str
    train_residual_std: float
    status: str
    created_by_run: str
    predecessor: str | None
    created_at: str

    def as_dict(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "version": self.version,
            "artifact": self.artifact.as_dict(),
            "input_schema": {"features": list(self.features), "target": self.target},
            "train_residual_std": self.train_residual_std,
            "status": self.status,
            "created_by_run": self.created_by_run,
            "predecessor": self.predecessor,
            "created_at": self.created_at,
        }


@dataclass(frozen=True)
class DeploymentRecord:
    id: str
    model_id: str
    bundle_hash: str
    target: str
    deployed_at: str
    active: bool
    delta: float
    lam: float
    delta_override: float | None
    lambda_override: float | None
    auto_tune: bool
    superseded_by: str | None

    def as_dict(self) -> dict:
        return {
            "id": self.id,
            "model_id": self.model_id,
            "bundle": self.bundle_hash,
            "target": self.target,
            "deployed_at": self.deployed_at,
            "active": self.active,
            "drift": {"delta": self.delta, "lambda": self.lam},
            "auto_tune": self.auto_tune,
            "superseded_by": self.superseded_by,
        }


@dataclass(frozen=True)
class GateVerdict:
    id: str
    model_id: str
    predecessor_id: str | None
    epsilon: float
    overall: bool
    checks: tuple[dict, ...]
    created_at: str

    def as_dict(self) -> dict:
        return {
            "id": self.id,
            "model_id": self.model_id,
            "predecessor_id": self.predecessor_id,
            "epsilon": self.epsilon,
            "overall": self.overall,
            "checks": list(self.checks),
            "created_at": self.created_at,
        }


@dataclass(frozen=True)
class TuningJob:
    id: str
    dedup_key: str
    trigger: str
    source_model: str
    target_snapshot: str | None
    deployment_id: str | None
    alarm_at: int | None
    result_name: str
    ridge: float
    tau: float
    window: int | None
    status: str
    result_model: str | None
    result_verdict: str | None
    failure: str | None
    created_at: str
    updated_at: str

    def as_dict(self) -> dict:
        return {
            "id": self.id,
            "trigger": self.trigger,
            "source_model": self.source_model,
            "target_snapshot": self.target_snapshot,
            "deployment_id": self.deployment_id,
            "alarm_at": self.alarm_at,
            "result_name": self.result_name,
            "params": {"lambda": self.ridge, "tau": self.tau},
            "window": self.window,
            "status": self.status,
            "result_model": self.result_model,
            "result_verdict": self.result_verdict,
            "failure": self.failure,
            "created_at": self.created_at,
            "updated_at": self.updated_at,
        }


class Registry:
    def __init__(self, db: Database, blobs: BlobStore, store: SnapshotStore, lineage: LineageGraph):
        self.db = db
        self.blobs = blobs
        self.store = store
        self.lineage = lineage

    # -- runs and models ----------------------------------------------------

    def record_training_run(
        self,
        *,
        name: str,
        algorithm: str,
        hyperparameters: Mapping,
        framework_name: str,
        framework_version: str,
        input_snapshot: str,
        train_fraction: float,
        seed: int,
        artifact: BlobRef,
        started_at: str | None = None,
        finished_at: str | None = None,
        input_features: list[str] | None = None,
        target: str | None = None,
        train_residual_std: float | None = None,
    ) -> tuple[TrainingRun, ModelRecord]:
        if not name:
            raise ValidationError("model name must be non-empty")
        if not isinstance(hyperparameters, Mapping):
            raise ValidationError("hyperparameters must be a key -> value map")
        hparams = canonical_json(dict(hyperparameters))
        if not (0.0 < float(train_fraction) <= 1.0):
            raise ValidationError("train_fraction must be in (0, 1]")
        if not isinstance(seed, int) or not (0 <= seed <= MAX_SEED):
            raise ValidationError(f"seed must be an integer in [0, {MAX_SEED}]")
        self.store.get_snapshot(input_snapshot)
        if not self.blobs.exists(artifact.hash):
            raise NotFoundError(f"no artifact blob {artifact.hash}", {"hash": artifact.hash})

        content = self.blobs.get(artifact.hash)
        if runtime.is_model_artifact(content):
            model = runtime.deserialize_model(content)
            features = list(model.feature_names)
            target_name = model.target_name
            resid_std = model.train_residual_std
        else:
            if input_features is None or target is None:
                raise ValidationError(
                    "non-MFLM artifacts require explicit input_features and target"
                )
            features = list(input_features)
            target_name = target
            resid_std = float(train_residual_std or 0.0)

        started = started_at or _now()
        finished = finished_at or started
        if finished < started:
            raise ValidationError("finished_at must be >= started_at")

        with self.db.tx() as conn:
            prev = self.db.query_one(
                "SELECT id, version FROM models WHERE name = ? ORDER BY version DESC LIMIT 1",
                (name,),
            )
            version = (prev["version"] + 1) if prev else 1
            predecessor = prev["id"] if prev else None
            model_id = self.db.next_id("model")
            run_id = self.db.next_id("run")
            created = _now()
            conn.execute(
                "INSERT INTO models(id, name, version, artifact_hash, artifact_size, "
                "features_json, target, train_residual_std, status, created_by_run, "
                "predecessor, created_at) VALUES(?,?,?,?,?,?,?,?,?,?,?,?)",
                (
                    model_id,
                    name,
                    version,
                    artifact.hash,
                    artifact.size,
                    json.dumps(features),
                    target_name,
                    resid_std,
                    "candidate",
                    run_id,
                    predecessor,
                    created,
                ),
            )
            conn.execute(
                "INSERT INTO artifacts(id, kind, created_at) VALUES(?,?,?)",
                (model_id, "model", created),
            )
            conn.execute(
                "INSERT INTO runs(id, algorithm, hyperparameters, framework_name, "
                "framework_version, input_snapshot, train_fraction, seed, started_at, "
                "finished_at, produced_model) VALUES(?,?,?,?,?,?,?,?,?,?,?)",
                (
                    run_id,
                    algorithm,
                    hparams,
                    framework_name,
                    framework_version,
                    input_snapshot,
                    float(train_fraction),
                    seed,
                    started,
                    finished,
                    model_id,
                ),
            )
            conn.execute(
                "INSERT INTO artifacts(id, kind, created_at) VALUES(?,?,?)",
                (run_id, "run", created),
            )
            self.lineage.add_link(model_id, input_snapshot, "trained_on")
        return self.get_run(run_id), self.get_model(model_id)

    def _model_from_row(self, row) -> ModelRecord:
        return ModelRecord(
            id=row["id"],
            name=row["name"],
            version=row["version"],
            artifact=BlobRef(hash=row["artifact_hash"], size=row["artifact_size"]),
            features=tuple(json.loads(row["features_json"])),
            target=row["target"],
            train_residual_std=row["train_residual_std"],
            status=row["status"],
            created_by_run=row["created_by_run"],
            predecessor=row["predecessor"],
            created_at=row["created_at"],
        )

    def get_model(self, model_id: str) -> ModelRecord:
        row = self.db.query_one("SELECT * FROM models WHERE id = ?", (model_id,))
        if row is None:
            raise NotFoundError(f"no model {model_id}", {"model": model_id})
        return self._model_from_row(row)

    def list_models(self, name: str | None = None) -> list[ModelRecord]:
        if name is None:
            rows = self.db.query("SELECT * FROM models ORDER BY name, version")
        else:
            rows = self.db.query(
                "SELECT * FROM models WHERE name = ? ORDER BY version", (name,)
            )
        return [self._model_from_row(r) for r in rows]

    def history(self, name: str) -> list[ModelRecord]:
        return self.list_models(name)

    def get_run(self, run_id: str) -> TrainingRun:
        row = self.db.query_one("SELECT * FROM runs WHERE id = ?", (run_id,))
        if row is None:
            raise NotFoundError(f"no run {run_id}", {"run": run_id})
        return TrainingRun(
            id=row["id"],
            algorithm=row["algorithm"],
            hyperparameters=row["hyperparameters"],
            framework_name=row["framework_name"],
            framework_version=row["framework_version"],
            input_snapshot=row["input_snapshot"],
            train_fraction=row["train_fraction"],
            seed=row["seed"],
            started_at=row["started_at"],
            finished_at=row["finished_at"],
            produced_model=row["produced_model"],
        )

    def load_linear_model(self, model_id: str) -> runtime.LinearModel:
        record = self.get_model(model_id)
        return runtime.deserialize_model(self.blobs.get(record.artifact.hash))

    # -- status machine -----------------------------------------------------

    def transition_status(self, model_id: str, new_status: str) -> ModelRecord:
        if new_status not in MODEL_STATUSES:
            raise ValidationError(f"unknown status {new_status!r}", {"statuses": MODEL_STATUSES})
        with self.db.tx() as conn:
            model = self.get_model(model_id)
            if new_status not in _LEGAL_TRANSITIONS[model.status]:
                raise StateError(
                    f"illegal transition {model.status} -> {new_status}",
                    {"current": model.status, "requested": new_status},
                )
            if new_status in ("validated", "deployed"):
                verdict = self.latest_verdict(model_id)
                if verdict is None or not verdict.overall:
                    raise StateError(
                        f"transition to {new_status} requires a passing gate verdict",
                        {"model": model_id, "verdict": verdict.id if verdict else None},
                    )
            if new_status == "deployed":
                for row in self.db.query(
                    "SELECT id FROM models WHERE name = ? AND status = 'deployed' AND id != ?",
                    (model.name, model_id),
                ):
                    conn.execute(
                        "UPDATE models SET status = 'retired' WHERE id = ?", (row["id"],)
                    )
            conn.execute("UPDATE models SET status = ? WHERE id = ?", (new_status, model_id))
        return self.get_model(model_id)

    # -- reproduction -------------------------------------------------------

    def reproduce_run(self, run_id: str) -> BlobRef:
        run = self.get_run(run_id)
        if run.algorithm not in (runtime.ALGORITHM_FIT, runtime.ALGORITHM_TUNE):
            raise UnsupportedError(
                f"algorithm {run.algorithm!r} is not the built-in runtime",
                {"algorithm": run.algorithm},
            )
        model = self.get_model(run.produced_model)
        hparams = json.loads(run.hyperparameters)
        try:
            table = self.store.materialize(run.input_snapshot)
        except NotFoundError as exc:
            raise CorruptionError(
                f"input snapshot {run.input_snapshot} is no longer materializable: {exc.message}",
                {"snapshot": run.input_snapshot},
            )
        if run.algorithm == runtime.ALGORITHM_FIT:
            refit = runtime.fit(
                table,
                list(model.features),
                model.target,
                ridge=float(hparams.get("lambda", 0.0)),
                seed=run.seed,
                train_fraction=run.train_fraction,
            )
        else:
            base_id = hparams.get("base_model")
            try:
                base = self.load_linear_model(base_id)
            except NotFoundError as exc:
                raise CorruptionError(
                    f"base model {base_id} is no longer loadable: {exc.message}",
                    {"model": base_id},
                )
            refit = runtime.tune(
                base,
                table,
                ridge=float(hparams.get("lambda", 0.0)),
                shrink=float(hparams.get("tau", 0.0)),
            )
        return self.blobs.put(runtime.serialize_model(refit))

    # -- evaluations and verdicts --------------------------------------------

    def upsert_evaluation(self, model_id: str, snapshot_id: str, metrics: dict) -> dict:
        with self.db.tx() as conn:
            existing = self.db.query_one(
                "SELECT id FROM evaluations WHERE model_id = ? AND snapshot_id = ?",
                (model_id, snapshot_id),
            )
            eval_id = existing["id"] if existing else self.db.next_id("eval")
            conn.execute(
                "INSERT INTO evaluations(id, model_id, snapshot_id, rmse, mae, r2, n, evaluated_at) "
                "VALUES(?,?,?,?,?,?,?,?) "
                "ON CONFLICT(model_id, snapshot_id) DO UPDATE SET "
                "rmse=excluded.rmse, mae=excluded.mae, r2=excluded.r2, n=excluded.n, "
                "evaluated_at=excluded.evaluated_at",
                (
                    eval_id,
                    model_id,
                    snapshot_id,
                    metrics["rmse"],
                    metrics["mae"],
                    metrics["r2"],
                    metrics["n"],
                    _now(),
                ),
            )
            conn.execute(
                "DELETE FROM evaluation_skips WHERE model_id = ? AND snapshot_id = ?",
                (model_id, snapshot_id),
            )
        return self.get_evaluation(model_id, snapshot_id)

    def record_skip(self, model_id: str, snapshot_id: str, reason: str) -> None:
        with self.db.tx() as conn:
            conn.execute(
                "INSERT INTO evaluation_skips(model_id, snapshot_id, reason, recorded_at) "
                "VALUES(?,?,?,?) ON CONFLICT(model_id, snapshot_id) DO UPDATE SET "
                "reason=excluded.reason, recorded_at=excluded.recorded_at",
                (model_id, snapshot_id, reason, _now()),
            )

    def get_evaluation(self, model_id: str, snapshot_id: str) -> dict | None:
        row = self.db.query_one(
            "SELECT * FROM evaluations WHERE model_id = ? AND snapshot_id = ?",
            (model_id, snapshot_id),
        )
        if row is None:
            return None
        return {
            "id": row["id"],
            "model_id": row["model_id"],
            "snapshot_id": row["snapshot_id"],
            "metrics": {"rmse": row["rmse"], "mae": row["mae"], "r2": row["r2"], "n": row["n"]},
            "evaluated_at": row["evaluated_at"],
        }

    def list_evaluations(self, model_id: str) -> list[dict]:
        rows = self.db.query(
            "SELECT snapshot_id FROM evaluations WHERE model_id = ? ORDER BY snapshot_id",
            (model_id,),
        )
        return [self.get_evaluation(model_id, r["snapshot_id"]) for r in rows]

    def list_skips(self, model_id: str) -> list[dict]:
        rows = self.db.query(
            "SELECT * FROM evaluation_skips WHERE model_id = ? ORDER BY snapshot_id",
            (model_id,),
        )
        return [
            {
                "model_id": r["model_id"],
                "snapshot_id": r["snapshot_id"],
                "reason": r["reason"],
                "recorded_at": r["recorded_at"],
            }
            for r in rows
        ]

    def insert_verdict(
        self,
        model_id: str,
        predecessor_id: str | None,
        epsilon: float,
        overall: bool,
        checks: list[dict],
    ) -> GateVerdict:
        with self.db.tx() as conn:
            verdict_id = self.db.next_id("verdict")
            conn.execute(
                "INSERT INTO gate_verdicts(id, model_id, predecessor_id, epsilon, overall, "
                "checks_json, created_at) VALUES(?,?,?,?,?,?,?)",
                (
                    verdict_id,
                    model_id,
                    predecessor_id,
                    epsilon,
                    1 if overall else 0,
                    json.dumps(checks),
                    _now(),
                ),
            )
        return self.get_verdict(verdict_id)

    def get_verdict(self, verdict_id: str) -> GateVerdict:
        row = self.db.query_one("SELECT * FROM gate_verdicts WHERE id = ?", (verdict_id,))
        if row is None:
            raise NotFoundError(f"no gate verdict {verdict_id}", {"verdict": verdict_id})
        return self._verdict_from_row(row)

    def _verdict_from_row(self, row) -> GateVerdict:
        return GateVerdict(
            id=row["id"],
            model_id=row["model_id"],
            predecessor_id=row["predecessor_id"],
            epsilon=row["epsilon"],
            overall=bool(row["overall"]),
            checks=tuple(json.loads(row["checks_json"])),
            created_at=row["created_at"],
        )

    def latest_verdict(self, model_id: str) -> GateVerdict | None:
        row = self.db.query_one(
            "SELECT * FROM gate_verdicts WHERE model_id = ? ORDER BY rowid DESC LIMIT 1",
            (model_id,),
        )
        return self._verdict_from_row(row) if row else None

    # -- bundles --------------------------------------------------------------

    def record_bundle(self, model_id: str, ref: BlobRef) -> None:
        with self.db.tx() as conn:
            conn.execute(
                "INSERT INTO bundles(model_id, blob_hash, blob_size, created_at) VALUES(?,?,?,?) "
                "ON CONFLICT(model_id) DO UPDATE SET blob_hash=excluded.blob_hash, "
                "blob_size=excluded.blob_size",
                (model_id, ref.hash, ref.size, _now()),
            )
            bundle_artifact = f"bundle-{ref.hash}"
            if not self.db.query_one("SELECT 1 FROM artifacts WHERE id = ?", (bundle_artifact,)):
                conn.execute(
                    "INSERT INTO artifacts(id, kind, created_at) VALUES(?,?,?)",
                    (bundle_artifact, "bundle", _now()),
                )
            if not self.lineage.has_link(model_id, bundle_artifact, "deployed_as"):
                self.lineage.add_link(model_id, bundle_artifact, "deployed_as")

    def bundle_for_model(self, model_id: str) -> BlobRef | None:
        row = self.db.query_one("SELECT * FROM bundles WHERE model_id = ?", (model_id,))
        if row is None:
            return None
        return BlobRef(hash=row["blob_hash"], size=row["blob_size"])

    # -- deployments ----------------------------------------------------------

    def create_deployment(
        self,
        model_id: str,
        bundle_hash: str,
        target: str,
        delta: float,
        lam: float,
        delta_override: float | None,
        lambda_override: float | None,
        auto_tune: bool,
    ) -> DeploymentRecord:
        if not target:
            raise ValidationError("deployment target must be non-empty")
        with self.db.tx() as conn:
            self.get_model(model_id)
            dep_id = self.db.next_id("dep")
            created = _now()
            for row in self.db.query(
                "SELECT id FROM deployments WHERE target = ? AND active = 1", (target,)
            ):
                conn.execute(
                    "UPDATE deployments SET active = 0, superseded_by = ? WHERE id = ?",
                    (dep_id, row["id"]),
                )
            conn.execute(
                "INSERT INTO deployments(id, model_id, bundle_hash, target, deployed_at, "
                "active, delta, lambda, delta_override, lambda_override, auto_tune, "
                "superseded_by) VALUES(?,?,?,?,?,?,?,?,?,?,?,?)",
                (
                    dep_id,
                    model_id,
                    bundle_hash,
                    target,
                    created,
                    1,
                    delta,
                    lam,
                    delta_override,
                    lambda_override,
                    1 if auto_tune else 0,
                    None,
                ),
            )
            conn.execute(
                "INSERT INTO artifacts(id, kind, created_at) VALUES(?,?,?)",
                (dep_id, "deployment", created),
            )
            conn.execute(
                "INSERT INTO drift_states(deployment_id, epoch, n, mean_abs_err, ph_m, ph_min, "
                "alarm, alarm_at) VALUES(?,?,?,?,?,?,?,?)",
                (dep_id, 1, 0, 0.0, 0.0, 0.0, 0, None),
            )
        return self.get_deployment(dep_id)

    def get_deployment(self, dep_id: str) -> DeploymentRecord:
        row = self.db.query_one("SELECT * FROM deployments WHERE id = ?", (dep_id,))
        if row is None:
            raise NotFoundError(f"no deployment {dep_id}", {"deployment": dep_id})
        return DeploymentRecord(
            id=row["id"],
            model_id=row["model_id"],
            bundle_hash=row["bundle_hash"],
            target=row["target"],
            deployed_at=row["deployed_at"],
            active=bool(row["active"]),
            delta=row["delta"],
            lam=row["lambda"],
            delta_override=row["delta_override"],
            lambda_override=row["lambda_override"],
            auto_tune=bool(row["auto_tune"]),
            superseded_by=row["superseded_by"],
        )

    def list_deployments(
        self, target: str | None = None, active: bool | None = None
    ) -> list[DeploymentRecord]:
        sql = "SELECT id FROM deployments"
        clauses, params = [], []
        if target is not None:
            clauses.append("target = ?")
            params.append(target)
        if active is not None:
            clauses.append("active = ?")
            params.append(1 if active else 0)
        if clauses:
            sql += " WHERE " + " AND ".join(clauses)
        sql += " ORDER BY id"
        return [self.get_deployment(r["id"]) for r in self.db.query(sql, tuple(params))]

    def active_deployment_for_target(self, target: str) -> DeploymentRecord | None:
        deps = self.list_deployments(target=target, active=True)
        return deps[0] if deps else None

    # -- jobs -------------------------------------------------------------------

    def _job_from_row(self, row) -> TuningJob:
        return TuningJob(
            id=row["id"],
            dedup_key=row["dedup_key"],
            trigger=row["trigger"],
            source_model=row["source_model"],
            target_snapshot=row["target_snapshot"],
            deployment_id=row["deployment_id"],
            alarm_at=row["alarm_at"],
            result_name=row["result_name"],
            ridge=row["ridge"],
            tau=row["tau"],
            window=row["window"],
            status=row["status"],
            result_model=row["result_model"],
            result_verdict=row["result_verdict"],
            failure=row["failure"],
            created_at=row["created_at"],
            updated_at=row["updated_at"],
        )

    def create_job(
        self,
        *,
        dedup_key: str,
        trigger: str,
        source_model: str,
        result_name: str,
        ridge: float,
        tau: float,
        target_snapshot: str | None = None,
        deployment_id: str | None = None,
        alarm_at: int | None = None,
        window: int | None = None,
    ) -> tuple[TuningJob, bool]:
        """Create a job or return the existing one for the same dedup key."""
        with self.db.tx() as conn:
            existing = self.db.query_one("SELECT * FROM jobs WHERE dedup_key = ?", (dedup_key,))
            if existing is not None:
                return self._job_from_row(existing), False
            job_id = self.db.next_id("job")
            now = _now()
            conn.execute(
                "INSERT INTO jobs(id, dedup_key, trigger, source_model, target_snapshot, "
                "deployment_id, alarm_at, result_name, ridge, tau, window, status, "
                "result_model, result_verdict, failure, created_at, updated_at) "
                "VALUES(?,?,?,?,?,?,?,?,?,?,?,?,?,?,?,?,?)",
                (
                    job_id,
                    dedup_key,
                    trigger,
                    source_model,
                    target_snapshot,
                    deployment_id,
                    alarm_at,
                    result_name,
                    ridge,
                    tau,
                    window,
                    "queued",
                    None,
                    None,
                    None,
                    now,
                    now,
                ),
            )
        return self.get_job(job_id), True

    def get_job(self, job_id: str) -> TuningJob:
        row = self.db.query_one("SELECT * FROM jobs WHERE id = ?", (job_id,))
        if row is None:
            raise NotFoundError(f"no job {job_id}", {"job": job_id})
        return self._job_from_row(row)

    def list_jobs(self, status: str | None = None) -> list[TuningJob]:
        if status is None:
            rows = self.db.query("SELECT * FROM jobs ORDER BY id")
        else:
            rows = self.db.query("SELECT * FROM jobs WHERE status = ? ORDER BY id", (status,))
        return [self._job_from_row(r) for r in rows]

    def update_job(self, job_id: str, **fields) -> TuningJob:
        allowed = {
            "status",
            "target_snapshot",
            "result_model",
            "result_verdict",
            "failure",
        }
        bad = set(fields) - allowed
        if bad:
            raise ValidationError(f"cannot update job fields: {sorted(bad)}")
        sets = ", ".join(f"{k} = ?" for k in fields)
        with self.db.tx() as conn:
            self.get_job(job_id)
            conn.execute(
                f"UPDATE jobs SET {sets}, updated_at = ? WHERE id = ?",
                (*fields.values(), _now(), job_id),
            )
        return self.get_job(job_id)

    # -- notifications ------------------------------------------------------------

    def add_notification(self, kind: str, subject: str, message: str) -> dict:
        with self.db.tx() as conn:
            note_id = self.db.next_id("note")
            created = _now()
            conn.execute(
                "INSERT INTO notifications(id, kind, subject, message, created_at) "
                "VALUES(?,?,?,?,?)",
                (note_id, kind, subject, message, created),
            )
        return {
            "id": note_id,
            "kind": kind,
            "subject": subject,
            "message": message,
            "created_at": created,
        }

    def list_notifications(self) -> list[dict]:
        rows = self.db.query("SELECT * FROM notifications ORDER BY rowid")
        return [
            {
                "id": r["id"],
                "kind": r["kind"],
                "subject": r["subject"],
                "message": r["message"],
                "created_at": r["created_at"],
            }
            for r in rows
        ]

    # -- audit ---------------------------------------------------------------------

    def audit(self) -> list[str]:
        """Full referential-integrity and invariant sweep; returns violations."""
        problems: list[str] = []

        def check(cond: bool, message: str) -> None:
            if not cond:
                problems.append(message)

        artifact_ids = {r["id"] for r in self.db.query("SELECT id FROM artifacts")}

        for r in self.db.query("SELECT * FROM snapshots"):
            check(
                self.db.query_one("SELECT 1 FROM datasets WHERE id = ?", (r["dataset_id"],))
                is not None,
                f"snapshot {r['id']} references missing dataset {r['dataset_id']}",
            )
            check(
                self.blobs.exists(r["blob_hash"]),
                f"snapshot {r['id']} payload blob {r['blob_hash']} missing",
            )
            if r["parent_id"] is not None:
                check(
                    self.db.query_one("SELECT 1 FROM snapshots WHERE id = ?", (r["parent_id"],))
                    is not None,
                    f"snapshot {r['id']} references missing parent {r['parent_id']}",
                )

        by_name: dict[str, list] = {}
        for r in self.db.query("SELECT * FROM models ORDER BY name, version"):
            by_name.setdefault(r["name"], []).append(r)
            check(
                self.db.query_one("SELECT 1 FROM runs WHERE id = ?", (r["created_by_run"],))
                is not None,
                f"model {r['id']} references missing run {r['created_by_run']}",
            )
            check(
                self.blobs.exists(r["artifact_hash"]),
                f"model {r['id']} artifact blob {r['artifact_hash']} missing",
            )
            if r["predecessor"] is not None:
                check(
                    self.db.query_one("SELECT 1 FROM models WHERE id = ?", (r["predecessor"],))
                    is not None,
                    f"model {r['id']} references missing predecessor {r['predecessor']}",
                )
        for name, rows in by_name.items():
            versions = [r["version"] for r in rows]
            check(
                versions == sorted(set(versions)),
                f"model name {name!r} versions not strictly increasing: {versions}",
            )
            deployed = [r["id"] for r in rows if r["status"] == "deployed"]
            check(
                len(deployed) <= 1,
                f"model name {name!r} has multiple deployed versions: {deployed}",
            )

        for r in self.db.query("SELECT * FROM runs"):
            check(
                self.db.query_one("SELECT 1 FROM snapshots WHERE id = ?", (r["input_snapshot"],))
                is not None,
                f"run {r['id']} references missing snapshot {r['input_snapshot']}",
            )
            check(
                self.db.query_one("SELECT 1 FROM models WHERE id = ?", (r["produced_model"],))
                is not None,
                f"run {r['id']} references missing model {r['produced_model']}",
            )

        for r in self.db.query("SELECT * FROM evaluations"):
            check(
                self.db.query_one("SELECT 1 FROM models WHERE id = ?", (r["model_id"],))
                is not None,
                f"evaluation {r['id']} references missing model {r['model_id']}",
            )
            check(
                self.db.query_one("SELECT 1 FROM snapshots WHERE id = ?", (r["snapshot_id"],))
                is not None,
                f"evaluation {r['id']} references missing snapshot {r['snapshot_id']}",
            )
            check(
                r["mae"] <= r["rmse"] + 1e-12,
                f"evaluation {r['id']} violates mae <= rmse",
            )

        targets: dict[str, int] = {}
        for r in self.db.query("SELECT * FROM deployments"):
            model_row = self.db.query_one("SELECT 1 FROM models WHERE id = ?", (r["model_id"],))
            check(model_row is not None, f"deployment {r['id']} references missing model")
            check(
                self.blobs.exists(r["bundle_hash"]),
                f"deployment {r['id']} bundle blob missing",
            )
            if r["active"]:
                targets[r["target"]] = targets.get(r["target"], 0) + 1
            verdict = self.latest_verdict(r["model_id"])
            passing = self.db.query_one(
                "SELECT 1 FROM gate_verdicts WHERE model_id = ? AND overall = 1",
                (r["model_id"],),
            )
            check(
                passing is not None,
                f"deployment {r['id']} model {r['model_id']} has no passing gate verdict",
            )
            del verdict
        for target, count in targets.items():
            check(count <= 1, f"target {target!r} has {count} active deployments")

        for r in self.db.query("SELECT * FROM lineage"):
            check(
                r["from_id"] in artifact_ids,
                f"lineage edge from unknown artifact {r['from_id']}",
            )
            check(
                r["to_id"] in artifact_ids,
                f"lineage edge to unknown artifact {r['to_id']}",
            )
        for kind in ACYCLIC_KINDS:
            cycle = self._find_cycle(kind)
            check(cycle is None, f"cycle in {kind} edges: {cycle}")

        for r in self.db.query("SELECT * FROM drift_states"):
            check(
                r["ph_min"] <= r["ph_m"] + 1e-12,
                f"drift state {r['deployment_id']} violates ph_min <= ph_m",
            )
        for r in self.db.query(
            "SELECT deployment_id, epoch, COUNT(*) AS c, MIN(seq) AS lo, MAX(seq) AS hi "
            "FROM feedback GROUP BY deployment_id, epoch"
        ):
            check(
                r["lo"] == 1 and r["hi"] == r["c"],
                f"feedback log {r['deployment_id']} epoch {r['epoch']} is not contiguous from 1",
            )

        for r in self.db.query("SELECT * FROM jobs"):
            if r["status"] == "succeeded":
                check(
                    r["result_model"] is not None,
                    f"succeeded job {r['id']} lacks a result model",
                )
            if r["status"] == "failed":
                check(r["failure"] is not None, f"failed job {r['id']} lacks a failure reason")

        return problems

    def _find_cycle(self, kind: str) -> list[str] | None:
        adj: dict[str, list[str]] = {}
        for r in self.db.query("SELECT from_id, to_id FROM lineage WHERE kind = ?", (kind,)):
            adj.setdefault(r["from_id"], []).append(r["to_id"])
        seen: set[str] = set()
        on_stack: set[str] = set()

        def dfs(node: str, path: list[str]) -> list[str] | None:
            seen.add(node)
            on_stack.add(node)
            path.append(node)
            for nxt in adj.get(node, []):
                if nxt in on_stack:
                    return path[path.index(nxt) :] + [nxt]
                if nxt not in seen:
                    found = dfs(nxt, path)
                    if found:
                        return found
            on_stack.discard(node)
            path.pop()
            return None

        for start in list(adj):
            if start not in seen:
                found = dfs(start, [])
                if found:
                    return found
        return None
