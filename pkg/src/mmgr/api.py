"""HTTP/JSON surface: resource-oriented routes delegating 1:1 to service
operations.

Responses are canonical JSON (sorted keys, no insignificant whitespace), so
serializing the same payload twice is byte-identical. Every error leaving
this layer is an ApiError envelope {code, message, detail} whose HTTP
status derives from the code alone. The OPS table below is the single
source of truth for API/CLI parity and the generated reference document.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any

from fastapi import FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from starlette.exceptions import HTTPException as StarletteHTTPException

from . import __version__
from .canonical import canonical_json_bytes
from .errors import HTTP_STATUS_BY_CODE, MmgrError, NotFoundError, ValidationError
from .service import ModelService


@dataclass(frozen=True)
class OpSpec:
    module: str
    op: str
    method: str | None  # None: client-side op, CLI only
    path: str | None
    cli: str
    summary: str


OPS: tuple[OpSpec, ...] = (
    OpSpec("artifact-store", "put_blob", "POST", "/blobs", "blob put", "Store raw bytes, returning their content address."),
    OpSpec("artifact-store", "get_blob", "GET", "/blobs/{digest}", "blob get", "Fetch stored bytes by hash; read is integrity-checked."),
    OpSpec("artifact-store", "create_dataset", "POST", "/datasets", "dataset create", "Register a logical dataset."),
    OpSpec("artifact-store", "list_datasets", "GET", "/datasets", "dataset list", "List datasets."),
    OpSpec("artifact-store", "get_dataset", "GET", "/datasets/{dataset_id}", "dataset show", "Fetch one dataset with its snapshot ids."),
    OpSpec("artifact-store", "ingest_snapshot", "POST", "/datasets/{dataset_id}/snapshots", "snapshot ingest", "Ingest a CSV body as a new immutable snapshot."),
    OpSpec("artifact-store", "get_snapshot", "GET", "/snapshots/{snapshot_id}", "snapshot show", "Fetch snapshot metadata."),
    OpSpec("artifact-store", "materialize", "GET", "/snapshots/{snapshot_id}/data", "snapshot data", "Materialize the snapshot as column-major values."),
    OpSpec("lineage-graph", "add_link", "POST", "/links", "link add", "Insert a typed lineage edge (cycle-checked)."),
    OpSpec("lineage-graph", "remove_link", "DELETE", "/links", "link remove", "Remove an edge (and its symmetric twin)."),
    OpSpec("lineage-graph", "connected", "GET", "/artifacts/{artifact_id}/connected", "link connected", "Artifacts reachable over one edge kind."),
    OpSpec("lineage-graph", "export", "GET", "/lineage/export", "lineage export", "Whole graph as sorted from<TAB>kind<TAB>to lines."),
    OpSpec("registry-core", "record_training_run", "POST", "/runs", "run record", "Capture a training run (+ model); built-in runs can train in-service."),
    OpSpec("registry-core", "get_run", "GET", "/runs/{run_id}", "run show", "Fetch one training run."),
    OpSpec("registry-core", "list_models", "GET", "/models", "model list", "List models, optionally by name."),
    OpSpec("registry-core", "get_model", "GET", "/models/{model_id}", "model show", "Fetch one model record."),
    OpSpec("registry-core", "history", "GET", "/history/{name}", "model history", "All versions recorded under a model name."),
    OpSpec("registry-core", "transition_status", "POST", "/models/{model_id}/status", "model status", "Advance the model state machine (gate-checked)."),
    OpSpec("registry-core", "reproduce_run", "POST", "/models/{model_id}/reproduce", "model reproduce", "Re-execute the recorded run; artifact hash must match."),
    OpSpec("registry-core", "audit", "GET", "/audit", "registry audit", "Full referential-integrity and invariant sweep."),
    OpSpec("model-runtime", "predict", "POST", "/models/{model_id}/predict", "model predict", "Predict rows with a stored model."),
    OpSpec("eval-engine", "compute_metrics", "POST", "/metrics", "evaluation metrics", "rmse/mae/r2 for paired vectors."),
    OpSpec("eval-engine", "evaluate", "POST", "/models/{model_id}/evaluate", "model evaluate", "Evaluate a model on one snapshot."),
    OpSpec("eval-engine", "auto_evaluate", "POST", "/models/{model_id}/auto-evaluate", "model auto-evaluate", "Evaluate on the training snapshot and every connected snapshot."),
    OpSpec("eval-engine", "gate", "POST", "/models/{model_id}/gate", "model gate", "Promotion gate against the predecessor."),
    OpSpec("eval-engine", "list_evaluations", "GET", "/models/{model_id}/evaluations", "evaluation list", "Stored reports and skip records for a model."),
    OpSpec("deploy-bundler", "build_bundle", "POST", "/models/{model_id}/bundle", "model bundle", "Build the deterministic deployment bundle."),
    OpSpec("deploy-bundler", "verify_bundle", "POST", "/bundles/verify", "bundle verify", "Verify an uploaded bundle archive."),
    OpSpec("registry-core", "create_deployment", "POST", "/deployments", "deployment create", "Deploy a validated model to a target."),
    OpSpec("registry-core", "list_deployments", "GET", "/deployments", "deployment list", "List deployments."),
    OpSpec("registry-core", "get_deployment", "GET", "/deployments/{deployment_id}", "deployment show", "Fetch one deployment."),
    OpSpec("edge-agent-sim", "poll_command", "GET", "/deployments/{deployment_id}/command", "deployment command", "Pull-poll endpoint the agent uses to learn about swaps."),
    OpSpec("drift-monitor", "ingest_feedback", "POST", "/deployments/{deployment_id}/feedback", "deployment feedback", "Ingest line-delimited feedback events."),
    OpSpec("drift-monitor", "drift_state", "GET", "/deployments/{deployment_id}/drift", "deployment drift", "Current Page-Hinkley state."),
    OpSpec("drift-monitor", "reset_drift", "POST", "/deployments/{deployment_id}/drift/reset", "deployment reset-drift", "Zero the statistic; feedback log untouched."),
    OpSpec("drift-monitor", "feedback_to_snapshot", "POST", "/deployments/{deployment_id}/snapshot", "deployment snapshot", "Materialize logged feedback as a snapshot."),
    OpSpec("tuning-orchestrator", "on_drift_alarm", "POST", "/deployments/{deployment_id}/tune", "deployment tune", "Enqueue the tuning job for the latched alarm."),
    OpSpec("tuning-orchestrator", "on_new_base_model", "POST", "/models/{model_id}/fanout", "model fanout", "Tune a base model onto every base_of-connected dataset."),
    OpSpec("tuning-orchestrator", "list_jobs", "GET", "/jobs", "job list", "List tuning jobs."),
    OpSpec("tuning-orchestrator", "get_job", "GET", "/jobs/{job_id}", "job show", "Fetch one tuning job."),
    OpSpec("tuning-orchestrator", "run_job", "POST", "/jobs/{job_id}/run", "job run", "Execute a queued job (idempotent on terminal jobs)."),
    OpSpec("tuning-orchestrator", "cancel_job", "POST", "/jobs/{job_id}/cancel", "job cancel", "Cancel a queued or running job."),
    OpSpec("tuning-orchestrator", "notifications", "GET", "/notifications", "notification list", "Operator notification records."),
    OpSpec("service-interface", "health", "GET", "/health", "service health", "Liveness and version."),
    OpSpec("edge-agent-sim", "run_agent", None, None, "agent run", "Run the simulated edge agent against a deployment."),
    OpSpec("edge-agent-sim", "generate_training_csv", None, None, "agent gen-csv", "Deterministic synthetic training CSV for a process spec."),
)


def generate_api_doc() -> str:
    lines = [
        "# HTTP API reference",
        "",
        "Generated from the operation table (`mmgr.api.OPS`). Bodies are",
        "canonical JSON unless noted; errors use the `{code, message, detail}`",
        "envelope with HTTP status derived from `code`:",
        "",
    ]
    lines += [f"- `{code}` -> {status}" for code, status in sorted(HTTP_STATUS_BY_CODE.items())]
    current = None
    for op in OPS:
        if op.module != current:
            current = op.module
            lines.append(f"\n## {current}\n")
        if op.method is None:
            lines.append(f"- `mmgr {op.cli}` (client-side) - {op.summary}")
        else:
            lines.append(f"- `{op.method} {op.path}` / `mmgr {op.cli}` - {op.summary}")
    return "\n".join(lines) + "\n"


def _cjson(payload: Any, status_code: int = 200) -> Response:
    return Response(
        content=canonical_json_bytes(payload),
        status_code=status_code,
        media_type="application/json",
    )


def _error_response(exc: MmgrError) -> Response:
    return _cjson(exc.envelope(), HTTP_STATUS_BY_CODE[exc.code])


async def _json_body(request: Request) -> dict:
    raw = await request.body()
    if not raw:
        return {}
    try:
        data = json.loads(raw.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise ValidationError(f"request body is not valid JSON: {exc}")
    if not isinstance(data, dict):
        raise ValidationError("request body must be a JSON object")
    return data


def _need(body: dict, key: str, kind: type | tuple, label: str | None = None) -> Any:
    if key not in body:
        raise ValidationError(f"missing required field {key!r}")
    return _check(body[key], key, kind, label)


def _opt(body: dict, key: str, kind: type | tuple, default: Any = None) -> Any:
    if key not in body or body[key] is None:
        return default
    return _check(body[key], key, kind)


def _check(value: Any, key: str, kind: type | tuple, label: str | None = None) -> Any:
    kinds = kind if isinstance(kind, tuple) else (kind,)
    if float in kinds and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if isinstance(value, bool) and bool not in kinds:
        raise ValidationError(f"field {key!r} has the wrong type")
    if not isinstance(value, kinds):
        raise ValidationError(f"field {key!r} has the wrong type")
    return value


def _parse_depth(raw: str | None) -> int | None:
    if raw is None or raw == "" or raw == "unbounded":
        return None
    try:
        return int(raw)
    except ValueError:
        raise ValidationError(f"depth must be a positive integer or 'unbounded', got {raw!r}")


def _parse_opt_int(raw: str | None, name: str) -> int | None:
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise ValidationError(f"{name} must be an integer, got {raw!r}")


def _parse_opt_bool(raw: str | None, name: str) -> bool | None:
    if raw is None or raw == "":
        return None
    if raw.lower() in ("true", "1", "yes"):
        return True
    if raw.lower() in ("false", "0", "no"):
        return False
    raise ValidationError(f"{name} must be true or false, got {raw!r}")


def create_app(service: ModelService) -> FastAPI:
    app = FastAPI(
        title="mmgr", version=__version__, openapi_url=None, docs_url=None, redoc_url=None
    )
    app.state.service = service

    @app.exception_handler(MmgrError)
    async def mmgr_error_handler(request: Request, exc: MmgrError):
        return _error_response(exc)

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        return _error_response(ValidationError(f"malformed request: {exc.errors()[:3]}"))

    @app.exception_handler(StarletteHTTPException)
    async def http_handler(request: Request, exc: StarletteHTTPException):
        return _error_response(
            NotFoundError(f"no such endpoint: {request.method} {request.url.path}")
        )

    @app.exception_handler(Exception)
    async def fallback_handler(request: Request, exc: Exception):
        err = MmgrError(f"internal error: {type(exc).__name__}")
        err.code = "corruption"
        return _error_response(err)

    # -- blobs ---------------------------------------------------------------

    @app.post("/blobs")
    async def put_blob(request: Request):
        return _cjson(service.put_blob(await request.body()).as_dict(), 201)

    @app.get("/blobs/{digest}")
    async def get_blob(digest: str):
        return Response(content=service.get_blob(digest), media_type="application/octet-stream")

    # -- datasets / snapshots ---------------------------------------------------

    @app.post("/datasets")
    async def create_dataset(request: Request):
        body = await _json_body(request)
        name = _need(body, "name", str)
        description = _opt(body, "description", str, "")
        return _cjson(service.create_dataset(name, description).as_dict(), 201)

    @app.get("/datasets")
    async def list_datasets():
        return _cjson([d.as_dict() for d in service.list_datasets()])

    @app.get("/datasets/{dataset_id}")
    async def get_dataset(dataset_id: str):
        return _cjson(service.get_dataset(dataset_id).as_dict())

    @app.post("/datasets/{dataset_id}/snapshots")
    async def ingest_snapshot(dataset_id: str, request: Request):
        parent = request.query_params.get("parent") or None
        snap = service.ingest_snapshot(dataset_id, await request.body(), parent)
        return _cjson(snap.as_dict(), 201)

    @app.get("/snapshots/{snapshot_id}")
    async def get_snapshot(snapshot_id: str):
        return _cjson(service.get_snapshot(snapshot_id).as_dict())

    @app.get("/snapshots/{snapshot_id}/data")
    async def snapshot_data(snapshot_id: str):
        table = service.materialize_snapshot(snapshot_id)
        return _cjson(
            {
                "schema": [[n, t] for n, t in table.schema],
                "row_count": table.row_count,
                "columns": table.columns,
            }
        )

    # -- lineage ------------------------------------------------------------------

    @app.post("/links")
    async def add_link(request: Request):
        body = await _json_body(request)
        edge = service.add_link(
            _need(body, "from", str),
            _need(body, "to", str),
            _need(body, "kind", str),
            _opt(body, "annotation", str),
        )
        return _cjson(edge.as_dict(), 201)

    @app.delete("/links")
    async def remove_link(request: Request):
        params = request.query_params
        for key in ("from", "to", "kind"):
            if not params.get(key):
                raise ValidationError(f"missing query parameter {key!r}")
        service.remove_link(params["from"], params["to"], params["kind"])
        return _cjson({"removed": True})

    @app.get("/artifacts/{artifact_id}/connected")
    async def connected(artifact_id: str, request: Request):
        params = request.query_params
        kind = params.get("kind")
        if not kind:
            raise ValidationError("missing query parameter 'kind'")
        depth = _parse_depth(params.get("depth"))
        direction = params.get("direction") or "out"
        return _cjson(
            {"artifacts": service.connected(artifact_id, kind, depth, direction)}
        )

    @app.get("/lineage/export")
    async def lineage_export():
        return Response(content=service.export_lineage(), media_type="text/plain; charset=utf-8")

    # -- runs / models -----------------------------------------------------------------

    @app.post("/runs")
    async def record_run(request: Request):
        body = await _json_body(request)
        run, model = service.record_run(
            name=_need(body, "name", str),
            algorithm=_need(body, "algorithm", str),
            hyperparameters=_opt(body, "hyperparameters", dict, {}),
            framework=_opt(body, "framework", dict, {}),
            input_snapshot=_need(body, "input_snapshot", str),
            train_fraction=_opt(body, "train_fraction", float, 1.0),
            seed=_opt(body, "seed", int, 0),
            artifact=_opt(body, "artifact", str),
            input_features=_opt(body, "input_features", list),
            target=_opt(body, "target", str),
            train_residual_std=_opt(body, "train_residual_std", float),
        )
        return _cjson({"run": run.as_dict(), "model": model.as_dict()}, 201)

    @app.get("/runs/{run_id}")
    async def get_run(run_id: str):
        return _cjson(service.get_run(run_id).as_dict())

    @app.get("/models")
    async def list_models(request: Request):
        name = request.query_params.get("name") or None
        return _cjson([m.as_dict() for m in service.list_models(name)])

    @app.get("/models/{model_id}")
    async def get_model(model_id: str):
        return _cjson(service.get_model(model_id).as_dict())

    @app.get("/history/{name}")
    async def history(name: str):
        return _cjson([m.as_dict() for m in service.history(name)])

    @app.post("/models/{model_id}/status")
    async def transition_status(model_id: str, request: Request):
        body = await _json_body(request)
        return _cjson(service.transition_status(model_id, _need(body, "status", str)).as_dict())

    @app.post("/models/{model_id}/reproduce")
    async def reproduce(model_id: str):
        return _cjson(service.reproduce_model(model_id))

    @app.post("/models/{model_id}/predict")
    async def predict(model_id: str, request: Request):
        body = await _json_body(request)
        rows = _need(body, "rows", list)
        return _cjson({"predictions": service.predict(model_id, rows)})

    # -- evaluation -----------------------------------------------------------------------

    @app.post("/metrics")
    async def metrics(request: Request):
        body = await _json_body(request)
        y = _need(body, "y", list)
        y_hat = _need(body, "y_hat", list)
        for label, vec in (("y", y), ("y_hat", y_hat)):
            for v in vec:
                if not isinstance(v, (int, float)) or isinstance(v, bool):
                    raise ValidationError(f"{label} must contain only numbers")
        return _cjson(service.compute_metrics([float(v) for v in y], [float(v) for v in y_hat]))

    @app.post("/models/{model_id}/evaluate")
    async def evaluate(model_id: str, request: Request):
        body = await _json_body(request)
        snapshot_id = _need(body, "snapshot_id", str)
        return _cjson(service.evaluate(model_id, snapshot_id))

    @app.post("/models/{model_id}/auto-evaluate")
    async def auto_evaluate(model_id: str):
        return _cjson(service.auto_evaluate(model_id))

    @app.post("/models/{model_id}/gate")
    async def gate(model_id: str):
        return _cjson(service.gate(model_id).as_dict())

    @app.get("/models/{model_id}/evaluations")
    async def list_evaluations(model_id: str):
        return _cjson(service.list_evaluations(model_id))

    # -- bundles / deployments ----------------------------------------------------------------

    @app.post("/models/{model_id}/bundle")
    async def build_bundle(model_id: str):
        return _cjson({"bundle": service.build_bundle(model_id).as_dict()}, 201)

    @app.post("/bundles/verify")
    async def verify_bundle_route(request: Request):
        expected = request.query_params.get("expected_hash") or None
        manifest = service.verify_bundle(await request.body(), expected)
        return _cjson(manifest.as_dict())

    @app.post("/deployments")
    async def create_deployment(request: Request):
        body = await _json_body(request)
        dep = service.create_deployment(
            model_id=_need(body, "model_id", str),
            target=_need(body, "target", str),
            delta=_opt(body, "delta", float),
            lam=_opt(body, "lambda", float),
            auto_tune=_opt(body, "auto_tune", bool, True),
        )
        return _cjson(dep.as_dict(), 201)

    @app.get("/deployments")
    async def list_deployments(request: Request):
        params = request.query_params
        return _cjson(
            [
                d.as_dict()
                for d in service.list_deployments(
                    params.get("target") or None,
                    _parse_opt_bool(params.get("active"), "active"),
                )
            ]
        )

    @app.get("/deployments/{deployment_id}")
    async def get_deployment(deployment_id: str):
        return _cjson(service.get_deployment(deployment_id).as_dict())

    @app.get("/deployments/{deployment_id}/command")
    async def deployment_command(deployment_id: str):
        return _cjson(service.deployment_command(deployment_id))

    @app.post("/deployments/{deployment_id}/feedback")
    async def ingest_feedback(deployment_id: str, request: Request):
        return _cjson(service.ingest_feedback_lines(deployment_id, await request.body()))

    @app.get("/deployments/{deployment_id}/drift")
    async def drift_state(deployment_id: str):
        return _cjson(service.drift_state(deployment_id).as_dict())

    @app.post("/deployments/{deployment_id}/drift/reset")
    async def reset_drift(deployment_id: str):
        return _cjson(service.reset_drift(deployment_id).as_dict())

    @app.post("/deployments/{deployment_id}/snapshot")
    async def feedback_snapshot(deployment_id: str, request: Request):
        body = await _json_body(request)
        snap = service.feedback_snapshot(
            deployment_id,
            start_seq=_opt(body, "start_seq", int),
            end_seq=_opt(body, "end_seq", int),
            last=_opt(body, "last", int),
        )
        return _cjson(snap.as_dict(), 201)

    @app.post("/deployments/{deployment_id}/tune")
    async def trigger_tune(deployment_id: str):
        job = service.trigger_drift_job(deployment_id)
        return _cjson({"job": job.as_dict() if job else None})

    @app.post("/models/{model_id}/fanout")
    async def fanout(model_id: str):
        return _cjson({"jobs": [j.as_dict() for j in service.fanout(model_id)]})

    # -- jobs / misc -------------------------------------------------------------------------------

    @app.get("/jobs")
    async def list_jobs(request: Request):
        status = request.query_params.get("status") or None
        return _cjson([j.as_dict() for j in service.list_jobs(status)])

    @app.get("/jobs/{job_id}")
    async def get_job(job_id: str):
        return _cjson(service.get_job(job_id).as_dict())

    @app.post("/jobs/{job_id}/run")
    async def run_job(job_id: str):
        return _cjson(service.run_job(job_id).as_dict())

    @app.post("/jobs/{job_id}/cancel")
    async def cancel_job(job_id: str):
        return _cjson(service.cancel_job(job_id).as_dict())

    @app.get("/notifications")
    async def notifications():
        return _cjson(service.notifications())

    @app.get("/audit")
    async def audit():
        problems = service.audit()
        return _cjson({"ok": not problems, "problems": problems})

    @app.get("/health")
    async def health():
        return _cjson({"status": "ok", "version": __version__})

    return app
