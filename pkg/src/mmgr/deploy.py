"""Bundle building and deployment creation against the registry."""

from __future__ import annotations

from .blobstore import BlobRef, BlobStore
from .bundles import DEFAULT_RUNTIME_RANGE, build_bundle_archive
from .config import ServiceConfig
from .errors import StateError
from .registry import DeploymentRecord, Registry
from .runtime import MODEL_FORMAT_TAG


class Deployer:
    def __init__(self, registry: Registry, blobs: BlobStore, config: ServiceConfig):
        self.registry = registry
        self.blobs = blobs
        self.config = config

    def drift_params(
        self,
        train_residual_std: float,
        delta_override: float | None = None,
        lambda_override: float | None = None,
    ) -> tuple[float, float]:
        delta = (
            delta_override
            if delta_override is not None
            else self.config.drift_delta_factor * train_residual_std
        )
        lam = lambda_override if lambda_override is not None else self.config.drift_lambda_factor * delta
        return delta, lam

    def build_bundle(self, model_id: str, runtime_range: str = DEFAULT_RUNTIME_RANGE) -> BlobRef:
        """Deterministic archive for a validated model; idempotent."""
        model = self.registry.get_model(model_id)
        if model.status != "validated":
            raise StateError(
                f"bundles are built from validated models, not {model.status}",
                {"model": model_id, "status": model.status},
            )
        verdict = self.registry.latest_verdict(model_id)
        metrics: dict = {}
        if verdict is not None:
            rmses = [c["candidate_rmse"] for c in verdict.checks]
            metrics = {
                "gate_overall": verdict.overall,
                "gate_epsilon": verdict.epsilon,
                "snapshots_compared": len(verdict.checks),
                "max_candidate_rmse": max(rmses) if rmses else None,
            }
        delta, lam = self.drift_params(model.train_residual_std)
        archive = build_bundle_archive(
            model_id=model.id,
            model_bytes=self.blobs.get(model.artifact.hash),
            model_blob_hash=model.artifact.hash,
            model_format=MODEL_FORMAT_TAG,
            features=list(model.features),
            target=model.target,
            metrics=metrics,
            monitoring={"delta": delta, "lambda": lam},
            created_at=model.created_at,
            runtime_range=runtime_range,
        )
        ref = self.blobs.put(archive)
        self.registry.record_bundle(model_id, ref)
        return ref

    def create_deployment(
        self,
        model_id: str,
        target: str,
        delta_override: float | None = None,
        lambda_override: float | None = None,
        auto_tune: bool = True,
    ) -> DeploymentRecord:
        """Deploy a validated (or already deployed) model to a target."""
        with self.registry.db.tx():
            model = self.registry.get_model(model_id)
            if model.status == "validated":
                bundle = self.registry.bundle_for_model(model_id) or self.build_bundle(model_id)
                self.registry.transition_status(model_id, "deployed")
            elif model.status == "deployed":
                bundle = self.registry.bundle_for_model(model_id)
                if bundle is None:
                    raise StateError(
                        "model is deployed but has no recorded bundle",
                        {"model": model_id},
                    )
            else:
                raise StateError(
                    f"model must be validated before deployment, is {model.status}",
                    {"model": model_id, "status": model.status},
                )
            delta, lam = self.drift_params(
                model.train_residual_std, delta_override, lambda_override
            )
            return self.registry.create_deployment(
                model_id=model_id,
                bundle_hash=bundle.hash,
                target=target,
                delta=delta,
                lam=lam,
                delta_override=delta_override,
                lambda_override=lambda_override,
                auto_tune=auto_tune,
            )
