"""ModelService: the composition root every interface (HTTP, CLI, tests)
talks to.

Owns the embedded database and blob store, wires the engines together, and
hosts the couple of cross-module flows: built-in training runs, the
validated-model fan-out trigger, feedback ingestion with alarm handling,
and the inline job drain.
"""

from __future__ import annotations

import json
from datetime import datetime, timezone
from pathlib import Path

from . import RUNTIME_NAME, RUNTIME_VERSION
from .blobstore import BlobRef, BlobStore
from .bundles import BundleManifest, verify_bundle
from .config import ServiceConfig
from .db import Database
from .deploy import Deployer
from .drift import DriftMonitor, DriftState
from .errors import NotFoundError, OrderingError, ValidationError
from .evaluation import EvalEngine, compute_metrics
from .lineage import LineageGraph
from .registry import (
    DeploymentRecord,
    GateVerdict,
    ModelRecord,
    Registry,
    TrainingRun,
    TuningJob,
)
from .runtime import ALGORITHM_FIT, fit, serialize_model
from .store import Dataset, Snapshot, SnapshotStore
from .tabular import Table
from .tuning import Orchestrator


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class ModelService:
    def __init__(self, config: ServiceConfig):
        self.config = config
        data_dir = Path(config.data_dir)
        data_dir.mkdir(parents=True, exist_ok=True)
        self.db = Database(data_dir / "registry.sqlite")
        self.blobs = BlobStore(data_dir / "blobs")
        self.store = SnapshotStore(self.db, self.blobs)
        self.lineage = LineageGraph(self.db)
        self.registry = Registry(self.db, self.blobs, self.store, self.lineage)
        self.evals = EvalEngine(
            self.registry,
            self.store,
            self.lineage,
            gate_epsilon=config.gate_epsilon,
            gate_abs_factor=config.gate_abs_factor,
        )
        self.monitor = DriftMonitor(self.registry, self.store, self.lineage)
        self.deployer = Deployer(self.registry, self.blobs, config)
        self.orchestrator = Orchestrator(
            self.registry,
            self.store,
            self.lineage,
            self.evals,
            self.monitor,
            self.deployer,
            config,
        )
        self._draining = False

    def close(self) -> None:
        self.db.close()

    # -- blobs & datasets -----------------------------------------------------

    def put_blob(self, content: bytes) -> BlobRef:
        return self.blobs.put(content)

    def get_blob(self, digest: str) -> bytes:
        return self.blobs.get(digest)

    def create_dataset(self, name: str, description: str = "") -> Dataset:
        return self.store.create_dataset(name, description)

    def get_dataset(self, dataset_id: str) -> Dataset:
        return self.store.get_dataset(dataset_id)

    def list_datasets(self) -> list[Dataset]:
        return self.store.list_datasets()

    def ingest_snapshot(self, dataset_id: str, csv_bytes: bytes, parent: str | None = None) -> Snapshot:
        return self.store.ingest_snapshot(dataset_id, csv_bytes, parent)

    def get_snapshot(self, snapshot_id: str) -> Snapshot:
        return self.store.get_snapshot(snapshot_id)

    def materialize_snapshot(self, snapshot_id: str) -> Table:
        return self.store.materialize(snapshot_id)

    # -- lineage ----------------------------------------------------------------

    def add_link(self, from_id: str, to_id: str, kind: str, annotation: str | None = None):
        return self.lineage.add_link(from_id, to_id, kind, annotation)

    def remove_link(self, from_id: str, to_id: str, kind: str) -> None:
        self.lineage.remove_link(from_id, to_id, kind)

    def connected(
        self, artifact_id: str, kind: str, depth: int | None = None, direction: str = "out"
    ) -> list[str]:
        return self.lineage.connected(artifact_id, kind, depth, direction)

    def export_lineage(self) -> str:
        return self.lineage.export_lines()

    # -- runs & models -------------------------------------------------------------

    def record_run(
        self,
        *,
        name: str,
        algorithm: str,
        hyperparameters: dict | None = None,
        framework: dict | None = None,
        input_snapshot: str,
        train_fraction: float = 1.0,
        seed: int = 0,
        artifact: str | None = None,
        input_features: list[str] | None = None,
        target: str | None = None,
        train_residual_std: float | None = None,
    ) -> tuple[TrainingRun, ModelRecord]:
        """Record a training run. With an artifact hash this is pure capture;
        without one, the built-in runtime trains server-side first."""
        hyperparameters = dict(hyperparameters or {})
        framework = dict(framework or {})
        if artifact is None:
            if algorithm != ALGORITHM_FIT:
                raise ValidationError(
                    f"only {ALGORITHM_FIT} runs can be trained in-service; "
                    "supply an artifact hash for external algorithms",
                    {"algorithm": algorithm},
                )
            if input_features is None or target is None:
                raise ValidationError("built-in training requires input_features and target")
            ridge = hyperparameters.get("lambda", 0.0)
            if not isinstance(ridge, (int, float)) or isinstance(ridge, bool):
                raise ValidationError("hyperparameter 'lambda' must be a number")
            table = self.store.materialize(input_snapshot)
            started = _now()
            model = fit(
                table,
                input_features,
                target,
                ridge=float(ridge),
                seed=seed,
                train_fraction=train_fraction,
            )
            finished = _now()
            ref = self.blobs.put(serialize_model(model))
            return self.registry.record_training_run(
                name=name,
                algorithm=ALGORITHM_FIT,
                hyperparameters={"lambda": float(ridge)},
                framework_name=framework.get("name", RUNTIME_NAME),
                framework_version=framework.get("version", RUNTIME_VERSION),
                input_snapshot=input_snapshot,
                train_fraction=train_fraction,
                seed=seed,
                artifact=ref,
                started_at=started,
                finished_at=finished,
            )
        if not framework.get("name") or not framework.get("version"):
            raise ValidationError("framework name and version are required")
        ref = self.blobs.ref(artifact)
        return self.registry.record_training_run(
            name=name,
            algorithm=algorithm,
            hyperparameters=hyperparameters,
            framework_name=framework["name"],
            framework_version=framework["version"],
            input_snapshot=input_snapshot,
            train_fraction=train_fraction,
            seed=seed,
            artifact=ref,
            input_features=input_features,
            target=target,
            train_residual_std=train_residual_std,
        )

    def get_run(self, run_id: str) -> TrainingRun:
        return self.registry.get_run(run_id)

    def get_model(self, model_id: str) -> ModelRecord:
        return self.registry.get_model(model_id)

    def list_models(self, name: str | None = None) -> list[ModelRecord]:
        return self.registry.list_models(name)

    def history(self, name: str) -> list[ModelRecord]:
        return self.registry.history(name)

    def transition_status(self, model_id: str, new_status: str) -> ModelRecord:
        record = self.registry.transition_status(model_id, new_status)
        if new_status == "validated":
            self.orchestrator.on_new_base_model(model_id)
            self._drain_jobs()
        return record

    def reproduce_model(self, model_id: str) -> dict:
        model = self.registry.get_model(model_id)
        ref = self.registry.reproduce_run(model.created_by_run)
        return {
            "run_id": model.created_by_run,
            "artifact": ref.as_dict(),
            "original": model.artifact.as_dict(),
            "identical": ref.hash == model.artifact.hash,
        }

    def predict(self, model_id: str, rows: list[dict]) -> list[float]:
        model = self.registry.load_linear_model(model_id)
        if not isinstance(rows, list) or not rows:
            raise ValidationError("rows must be a non-empty list of feature maps")
        out = []
        for row in rows:
            if not isinstance(row, dict):
                raise ValidationError("each row must be a feature map")
            out.append(model.predict_row(row))
        return out

    # -- evaluation -------------------------------------------------------------------

    def compute_metrics(self, y: list[float], y_hat: list[float]) -> dict:
        return compute_metrics(y, y_hat)

    def evaluate(self, model_id: str, snapshot_id: str) -> dict:
        return self.evals.evaluate(model_id, snapshot_id)

    def auto_evaluate(self, model_id: str) -> dict:
        return self.evals.auto_evaluate(model_id)

    def gate(self, model_id: str) -> GateVerdict:
        return self.evals.gate(model_id)

    def list_evaluations(self, model_id: str) -> dict:
        self.registry.get_model(model_id)
        return {
            "reports": self.registry.list_evaluations(model_id),
            "skips": self.registry.list_skips(model_id),
        }

    # -- bundles & deployments -----------------------------------------------------------

    def build_bundle(self, model_id: str) -> BlobRef:
        return self.deployer.build_bundle(model_id)

    def verify_bundle(self, archive: bytes, expected_hash: str | None = None) -> BundleManifest:
        return verify_bundle(archive, expected_hash)

    def create_deployment(
        self,
        model_id: str,
        target: str,
        delta: float | None = None,
        lam: float | None = None,
        auto_tune: bool = True,
    ) -> DeploymentRecord:
        dep = self.deployer.create_deployment(
            model_id, target, delta_override=delta, lambda_override=lam, auto_tune=auto_tune
        )
        self._drain_jobs()
        return dep

    def get_deployment(self, dep_id: str) -> DeploymentRecord:
        return self.registry.get_deployment(dep_id)

    def list_deployments(
        self, target: str | None = None, active: bool | None = None
    ) -> list[DeploymentRecord]:
        return self.registry.list_deployments(target, active)

    def deployment_command(self, dep_id: str) -> dict:
        """Pull-poll answer for the edge agent at `dep_id`."""
        dep = self.registry.get_deployment(dep_id)
        if dep.active:
            return {"command": "none"}
        current = dep
        while current.superseded_by is not None:
            current = self.registry.get_deployment(current.superseded_by)
        if not current.active:
            return {"command": "stop"}
        return {
            "command": "swap",
            "deployment_id": current.id,
            "bundle": current.bundle_hash,
            "model_id": current.model_id,
        }

    # -- feedback & drift ------------------------------------------------------------------

    def ingest_feedback_lines(self, deployment_id: str, body: bytes) -> dict:
        """Line-delimited JSON feedback events; events before a bad line stay
        ingested (the wire is at-least-once, ordering enforced per event)."""
        try:
            text = body.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ValidationError(f"feedback body is not UTF-8: {exc}")
        lines = [ln for ln in text.split("\n") if ln.strip()]
        if not lines:
            raise ValidationError("no feedback events in body")
        events: list[dict] = []
        parse_error: ValidationError | None = None
        for i, line in enumerate(lines, start=1):
            try:
                event = json.loads(line)
            except ValueError as exc:
                parse_error = ValidationError(
                    f"feedback line {i} is not valid JSON: {exc}", {"line": i}
                )
                break
            if not isinstance(event, dict):
                parse_error = ValidationError(
                    f"feedback line {i} is not an object", {"line": i}
                )
                break
            if "deployment_id" in event and event["deployment_id"] != deployment_id:
                parse_error = ValidationError(
                    f"feedback line {i} addresses {event['deployment_id']}, "
                    f"not {deployment_id}",
                    {"line": i},
                )
                break
            events.append(event)

        state = None
        accepted = 0
        try:
            if events:
                try:
                    state, alarm_at = self.monitor.ingest_batch(deployment_id, events)
                    accepted = len(events)
                except (ValidationError, OrderingError) as exc:
                    index = exc.detail.get("event_index", 0)
                    exc.detail["line"] = index + 1
                    accepted = index
                    if exc.detail.get("alarm_at") is not None:
                        self.orchestrator.on_drift_alarm(
                            deployment_id, exc.detail["alarm_at"]
                        )
                    raise
                if alarm_at is not None:
                    self.orchestrator.on_drift_alarm(deployment_id, alarm_at)
            if parse_error is not None:
                parse_error.detail["accepted"] = accepted
                raise parse_error
        finally:
            self._drain_jobs()
        final = state if state is not None else self.monitor.state(deployment_id)
        return {"accepted": accepted, "state": final.as_dict()}

    def drift_state(self, deployment_id: str) -> DriftState:
        return self.monitor.state(deployment_id)

    def reset_drift(self, deployment_id: str) -> DriftState:
        return self.monitor.reset(deployment_id)

    def feedback_snapshot(
        self,
        deployment_id: str,
        start_seq: int | None = None,
        end_seq: int | None = None,
        last: int | None = None,
    ) -> Snapshot:
        return self.monitor.feedback_to_snapshot(deployment_id, start_seq, end_seq, last)

    # -- jobs ---------------------------------------------------------------------------------

    def list_jobs(self, status: str | None = None) -> list[TuningJob]:
        return self.registry.list_jobs(status)

    def get_job(self, job_id: str) -> TuningJob:
        return self.registry.get_job(job_id)

    def run_job(self, job_id: str) -> TuningJob:
        job = self.orchestrator.run_job(job_id)
        self._drain_jobs()
        return self.registry.get_job(job_id)

    def cancel_job(self, job_id: str) -> TuningJob:
        return self.orchestrator.cancel_job(job_id)

    def fanout(self, model_id: str) -> list[TuningJob]:
        jobs = self.orchestrator.on_new_base_model(model_id)
        self._drain_jobs()
        return [self.registry.get_job(j.id) for j in jobs]

    def trigger_drift_job(self, deployment_id: str) -> TuningJob | None:
        state = self.monitor.state(deployment_id)
        if not state.alarm:
            raise NotFoundError(
                f"deployment {deployment_id} has no latched alarm to act on",
                {"deployment": deployment_id},
            )
        job = self.orchestrator.on_drift_alarm(deployment_id, state.alarm_at)
        self._drain_jobs()
        return self.registry.get_job(job.id) if job is not None else None

    def _drain_jobs(self) -> None:
        """Run every ready queued job inline, in id order, until quiescent."""
        if not self.config.auto_run_jobs or self._draining:
            return
        self._draining = True
        try:
            while True:
                ready = [
                    j for j in self.registry.list_jobs("queued") if self.orchestrator.ready(j)
                ]
                if not ready:
                    break
                self.orchestrator.run_job(ready[0].id)
        finally:
            self._draining = False

    # -- misc -----------------------------------------------------------------------------------

    def notifications(self) -> list[dict]:
        return self.registry.list_notifications()

    def audit(self) -> list[str]:
        return self.registry.audit()
