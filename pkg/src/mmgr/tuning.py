"""Autonomous tuning orchestration.

Drift alarms and newly validated base models enqueue idempotent tuning
jobs. A job re-estimates the source model on its target snapshot (for drift
jobs, a feedback snapshot cut at run time), evaluates, gates, and only on a
passing verdict promotes and redeploys. Gate failures keep the candidate
model for the audit trail, mark the job failed, and leave deployments
untouched; crashes roll back every registry effect so a rerun has exactly
one result.

Drift jobs wait until the deployment has accumulated a full tuning window
of post-alarm events, so the "last W events" cut consists of data recorded
under the drifted regime.
"""

from __future__ import annotations

import json
import threading

from . import RUNTIME_NAME, RUNTIME_VERSION
from .config import ServiceConfig
from .deploy import Deployer
from .drift import DriftMonitor
from .errors import MmgrError, StateError, ValidationError
from .evaluation import EvalEngine
from .lineage import LineageGraph
from .registry import Registry, TuningJob
from .runtime import ALGORITHM_TUNE, serialize_model, tune
from .store import Dataset, SnapshotStore


class Orchestrator:
    def __init__(
        self,
        registry: Registry,
        store: SnapshotStore,
        lineage: LineageGraph,
        evals: EvalEngine,
        monitor: DriftMonitor,
        deployer: Deployer,
        config: ServiceConfig,
    ):
        self.registry = registry
        self.store = store
        self.lineage = lineage
        self.evals = evals
        self.monitor = monitor
        self.deployer = deployer
        self.config = config
        self._job_lock = threading.RLock()
        self.test_hooks: dict = {}

    # -- triggers -----------------------------------------------------------

    def _source_ridge(self, model_id: str) -> float:
        model = self.registry.get_model(model_id)
        run = self.registry.get_run(model.created_by_run)
        value = json.loads(run.hyperparameters).get("lambda", 0.0)
        return float(value) if isinstance(value, (int, float)) else 0.0

    def on_drift_alarm(self, deployment_id: str, alarm_at: int) -> TuningJob | None:
        """React to a drift alarm; idempotent per (deployment, alarm_at)."""
        deployment = self.registry.get_deployment(deployment_id)
        state = self.monitor.state(deployment_id)
        if not state.alarm:
            raise StateError(
                f"deployment {deployment_id} has no latched drift alarm",
                {"deployment": deployment_id},
            )
        if alarm_at != state.alarm_at:
            raise ValidationError(
                f"alarm_at {alarm_at} does not match latched alarm at {state.alarm_at}",
                {"deployment": deployment_id, "alarm_at": state.alarm_at},
            )
        if not deployment.auto_tune:
            self.registry.add_notification(
                "drift_alarm_ignored",
                deployment_id,
                f"drift alarm at seq {alarm_at} ignored: auto-tuning disabled",
            )
            return None
        model = self.registry.get_model(deployment.model_id)
        job, _ = self.registry.create_job(
            dedup_key=f"drift:{deployment_id}:{alarm_at}",
            trigger="drift_alarm",
            source_model=deployment.model_id,
            result_name=model.name,
            ridge=self._source_ridge(deployment.model_id),
            tau=self.config.tune_tau,
            deployment_id=deployment_id,
            alarm_at=alarm_at,
            window=self.config.tuning_window,
        )
        return job

    def fan_out_targets(self, snapshot_id: str) -> list[Dataset]:
        """Specific datasets connected to a base snapshot via base_of edges."""
        own_dataset = self.store.get_snapshot(snapshot_id).dataset_id
        datasets: dict[str, Dataset] = {}
        for artifact in self.lineage.connected(snapshot_id, "base_of", None, "out"):
            if self.registry.db.query_one("SELECT 1 FROM datasets WHERE id = ?", (artifact,)):
                ds = self.store.get_dataset(artifact)
            else:
                row = self.registry.db.query_one(
                    "SELECT dataset_id FROM snapshots WHERE id = ?", (artifact,)
                )
                if row is None:
                    continue
                ds = self.store.get_dataset(row["dataset_id"])
            if ds.id != own_dataset:
                datasets[ds.id] = ds
        return [datasets[k] for k in sorted(datasets)]

    def on_new_base_model(self, model_id: str) -> list[TuningJob]:
        """Fan a new base model out to every base_of-connected dataset."""
        model = self.registry.get_model(model_id)
        run = self.registry.get_run(model.created_by_run)
        jobs = []
        ridge = self._source_ridge(model_id)
        for dataset in self.fan_out_targets(run.input_snapshot):
            if not dataset.snapshot_ids:
                continue
            snapshot_id = dataset.snapshot_ids[-1]
            job, _ = self.registry.create_job(
                dedup_key=f"base:{model_id}:{snapshot_id}",
                trigger="new_base_model",
                source_model=model_id,
                result_name=f"{model.name}@{dataset.name}",
                ridge=ridge,
                tau=self.config.tune_tau,
                target_snapshot=snapshot_id,
            )
            jobs.append(job)
        return jobs

    # -- execution ----------------------------------------------------------

    def ready(self, job: TuningJob) -> bool:
        if job.status != "queued":
            return False
        if job.trigger != "drift_alarm":
            return True
        state = self.monitor.state(job.deployment_id)
        if not state.alarm or state.alarm_at != job.alarm_at:
            return False
        return state.n >= job.alarm_at + (job.window or 0)

    def run_job(self, job_id: str) -> TuningJob:
        """Execute a queued job; terminal jobs are a no-op. All registry
        effects commit atomically, so a crashed run can simply be retried."""
        with self._job_lock:
            job = self.registry.get_job(job_id)
            if job.status in ("succeeded", "failed", "cancelled"):
                return job
            self.registry.update_job(job_id, status="running")
            job = self.registry.get_job(job_id)
            try:
                with self.registry.db.tx():
                    self._execute(job)
                    hook = self.test_hooks.get("before_commit")
                    if hook is not None:
                        hook(job)
            except MmgrError as exc:
                self.registry.update_job(job_id, status="failed", failure=exc.message)
                self.registry.add_notification(
                    "job_failed", job_id, f"tuning job failed: {exc.message}"
                )
            return self.registry.get_job(job_id)

    def cancel_job(self, job_id: str) -> TuningJob:
        job = self.registry.get_job(job_id)
        if job.status not in ("queued", "running"):
            raise StateError(
                f"cannot cancel a {job.status} job", {"job": job_id, "status": job.status}
            )
        return self.registry.update_job(job_id, status="cancelled", failure="cancelled")

    def _execute(self, job: TuningJob) -> None:
        if job.trigger == "drift_alarm":
            state = self.monitor.state(job.deployment_id)
            window = min(job.window or self.config.tuning_window, state.n)
            snapshot = self.monitor.feedback_to_snapshot(job.deployment_id, last=window)
            target_snapshot = snapshot.id
        else:
            target_snapshot = job.target_snapshot

        base = self.registry.load_linear_model(job.source_model)
        table = self.store.materialize(target_snapshot)
        tuned = tune(base, table, ridge=job.ridge, shrink=job.tau)
        artifact = self.registry.blobs.put(serialize_model(tuned))
        _, model = self.registry.record_training_run(
            name=job.result_name,
            algorithm=ALGORITHM_TUNE,
            hyperparameters={
                "lambda": job.ridge,
                "tau": job.tau,
                "base_model": job.source_model,
            },
            framework_name=RUNTIME_NAME,
            framework_version=RUNTIME_VERSION,
            input_snapshot=target_snapshot,
            train_fraction=1.0,
            seed=0,
            artifact=artifact,
        )
        self.lineage.add_link(model.id, job.source_model, "tuned_from")
        verdict = self.evals.gate(model.id)
        if not verdict.overall:
            self.registry.update_job(
                job.id,
                status="failed",
                target_snapshot=target_snapshot,
                result_model=model.id,
                result_verdict=verdict.id,
                failure="gate failed: candidate did not match its predecessor",
            )
            self.registry.add_notification(
                "gate_failed",
                job.id,
                f"tuned model {model.id} failed the promotion gate; deployment unchanged",
            )
            return

        self.registry.transition_status(model.id, "validated")
        self.on_new_base_model(model.id)

        if job.trigger == "drift_alarm":
            old = self.registry.get_deployment(job.deployment_id)
            self.deployer.create_deployment(
                model.id,
                old.target,
                delta_override=old.delta_override,
                lambda_override=old.lambda_override,
                auto_tune=old.auto_tune,
            )
            self.monitor.reset(old.id)
        else:
            for dep in self.registry.list_deployments(active=True):
                if self.registry.get_model(dep.model_id).name == job.result_name:
                    self.deployer.create_deployment(
                        model.id,
                        dep.target,
                        delta_override=dep.delta_override,
                        lambda_override=dep.lambda_override,
                        auto_tune=dep.auto_tune,
                    )
                    self.monitor.reset(dep.id)

        self.registry.update_job(
            job.id,
            status="succeeded",
            target_snapshot=target_snapshot,
            result_model=model.id,
            result_verdict=verdict.id,
        )
