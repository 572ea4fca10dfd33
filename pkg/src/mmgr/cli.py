"""`mmgr` command line: a thin client over the HTTP API.

Every noun/verb maps 1:1 onto an endpoint (the table in mmgr.api.OPS).
The endpoint may be a normal http(s) URL or `local:<data-dir>`, which runs
the service in-process against that data directory - the single-user mode.
Exit codes: 0 success, 1 service error, 2 usage error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import httpx

from . import __version__
from .canonical import canonical_json


def _make_client(endpoint: str, config_path: str | None):
    if endpoint.startswith("local:"):
        from fastapi.testclient import TestClient

        from .api import create_app
        from .config import load_config
        from .service import ModelService

        data_dir = endpoint[len("local:"):]
        config = load_config(config_path, data_dir=data_dir or None)
        service = ModelService(config)
        return TestClient(create_app(service), raise_server_exceptions=False)
    return httpx.Client(base_url=endpoint, timeout=60.0)


class Ctx:
    def __init__(self, endpoint: str, fmt: str, config_path: str | None):
        self.endpoint = endpoint
        self.fmt = fmt
        self.config_path = config_path
        self._client = None

    @property
    def client(self):
        if self._client is None:
            self._client = _make_client(self.endpoint, self.config_path)
        return self._client


def _print_table(payload) -> None:
    if isinstance(payload, list):
        if not payload:
            click.echo("(empty)")
            return
        if all(isinstance(item, dict) for item in payload):
            keys = sorted({k for item in payload for k in item})
            widths = {
                k: max(len(k), *(len(_cell(item.get(k))) for item in payload)) for k in keys
            }
            click.echo("  ".join(k.ljust(widths[k]) for k in keys))
            for item in payload:
                click.echo("  ".join(_cell(item.get(k)).ljust(widths[k]) for k in keys))
        else:
            for item in payload:
                click.echo(_cell(item))
    elif isinstance(payload, dict):
        for k in sorted(payload):
            click.echo(f"{k}: {_cell(payload[k])}")
    else:
        click.echo(_cell(payload))


def _cell(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, (dict, list)):
        return canonical_json(value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _request(
    ctx: Ctx,
    method: str,
    path: str,
    *,
    json_body: dict | None = None,
    content: bytes | None = None,
    params: dict | None = None,
    headers: dict | None = None,
    raw_out: Path | None = None,
    quiet: bool = False,
):
    kwargs = {}
    if json_body is not None:
        kwargs["content"] = canonical_json(json_body).encode("utf-8")
        kwargs["headers"] = {"content-type": "application/json", **(headers or {})}
    elif content is not None:
        kwargs["content"] = content
        if headers:
            kwargs["headers"] = headers
    if params:
        kwargs["params"] = {k: v for k, v in params.items() if v is not None}
    try:
        resp = ctx.client.request(method, path, **kwargs)
    except httpx.TransportError as exc:
        click.echo(f"error: cannot reach {ctx.endpoint}: {exc}", err=True)
        sys.exit(1)
    if resp.status_code >= 400:
        click.echo(resp.text, err=True)
        sys.exit(1)
    if raw_out is not None:
        raw_out.write_bytes(resp.content)
        if not quiet:
            click.echo(f"wrote {len(resp.content)} bytes to {raw_out}")
        return None
    content_type = resp.headers.get("content-type", "")
    if content_type.startswith("application/json"):
        payload = resp.json()
        if not quiet:
            if ctx.fmt == "json":
                click.echo(canonical_json(payload))
            else:
                _print_table(payload)
        return payload
    if not quiet:
        click.echo(resp.text, nl=False)
    return resp.content


@click.group()
@click.version_option(__version__)
@click.option("--endpoint", default="http://127.0.0.1:8787", envvar="MMGR_ENDPOINT",
              help="Service URL, or local:<data-dir> for in-process single-user mode.")
@click.option("--format", "fmt", type=click.Choice(["json", "table"]), default="json",
              help="Output format.")
@click.option("--config", "config_path", default=None,
              help="key=value config file (local mode and `service serve`).")
@click.pass_context
def cli(ctx, endpoint, fmt, config_path):
    ctx.obj = Ctx(endpoint, fmt, config_path)


def main():
    cli(max_content_width=100)


# -- blob ------------------------------------------------------------------


@cli.group()
def blob():
    """Content-addressed blobs."""


@blob.command("put")
@click.option("--file", "path", type=click.Path(exists=True, path_type=Path), required=True)
@click.pass_obj
def blob_put(obj, path):
    _request(obj, "POST", "/blobs", content=path.read_bytes())


@blob.command("get")
@click.argument("digest")
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.pass_obj
def blob_get(obj, digest, out):
    _request(obj, "GET", f"/blobs/{digest}", raw_out=out)


# -- dataset ---------------------------------------------------------------


@cli.group()
def dataset():
    """Logical datasets."""


@dataset.command("create")
@click.option("--name", required=True)
@click.option("--description", default="")
@click.pass_obj
def dataset_create(obj, name, description):
    _request(obj, "POST", "/datasets", json_body={"name": name, "description": description})


@dataset.command("list")
@click.pass_obj
def dataset_list(obj):
    _request(obj, "GET", "/datasets")


@dataset.command("show")
@click.argument("dataset_id")
@click.pass_obj
def dataset_show(obj, dataset_id):
    _request(obj, "GET", f"/datasets/{dataset_id}")


# -- snapshot ----------------------------------------------------------------


@cli.group()
def snapshot():
    """Immutable dataset versions."""


@snapshot.command("ingest")
@click.option("--dataset", "dataset_id", required=True)
@click.option("--file", "path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--parent", default=None)
@click.pass_obj
def snapshot_ingest(obj, dataset_id, path, parent):
    payload = _request(
        obj,
        "POST",
        f"/datasets/{dataset_id}/snapshots",
        content=path.read_bytes(),
        headers={"content-type": "text/csv"},
        params={"parent": parent},
        quiet=True,
    )
    click.echo(payload["id"] if obj.fmt == "table" else canonical_json(payload))


@snapshot.command("show")
@click.argument("snapshot_id")
@click.pass_obj
def snapshot_show(obj, snapshot_id):
    _request(obj, "GET", f"/snapshots/{snapshot_id}")


@snapshot.command("data")
@click.argument("snapshot_id")
@click.pass_obj
def snapshot_data(obj, snapshot_id):
    _request(obj, "GET", f"/snapshots/{snapshot_id}/data")


# -- link / lineage -------------------------------------------------------------


@cli.group()
def link():
    """Semantic connections between artifacts."""


@link.command("add")
@click.option("--from", "from_id", required=True)
@click.option("--to", "to_id", required=True)
@click.option("--kind", required=True)
@click.option("--annotation", default=None)
@click.pass_obj
def link_add(obj, from_id, to_id, kind, annotation):
    body = {"from": from_id, "to": to_id, "kind": kind}
    if annotation is not None:
        body["annotation"] = annotation
    _request(obj, "POST", "/links", json_body=body)


@link.command("remove")
@click.option("--from", "from_id", required=True)
@click.option("--to", "to_id", required=True)
@click.option("--kind", required=True)
@click.pass_obj
def link_remove(obj, from_id, to_id, kind):
    _request(obj, "DELETE", "/links", params={"from": from_id, "to": to_id, "kind": kind})


@link.command("connected")
@click.argument("artifact_id")
@click.option("--kind", required=True)
@click.option("--depth", default=None, help="Positive integer or 'unbounded' (default).")
@click.option("--direction", type=click.Choice(["out", "in", "both"]), default="out")
@click.pass_obj
def link_connected(obj, artifact_id, kind, depth, direction):
    _request(
        obj,
        "GET",
        f"/artifacts/{artifact_id}/connected",
        params={"kind": kind, "depth": depth, "direction": direction},
    )


@cli.group()
def lineage():
    """Whole-graph operations."""


@lineage.command("export")
@click.pass_obj
def lineage_export(obj):
    _request(obj, "GET", "/lineage/export")


# -- run -------------------------------------------------------------------------


@cli.group()
def run():
    """Training runs."""


@run.command("record")
@click.option("--name", required=True, help="Model name the run produces a version of.")
@click.option("--algorithm", default="builtin.linear", show_default=True)
@click.option("--snapshot", "input_snapshot", required=True)
@click.option("--train-fraction", type=float, default=1.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--hyperparameters", "hparams", default=None, help="JSON object.")
@click.option("--artifact", default=None, help="Blob hash of an externally trained model.")
@click.option("--features", default=None, help="Comma-separated feature columns (built-in).")
@click.option("--target", default=None)
@click.option("--framework-name", default=None)
@click.option("--framework-version", default=None)
@click.pass_obj
def run_record(obj, name, algorithm, input_snapshot, train_fraction, seed, hparams,
               artifact, features, target, framework_name, framework_version):
    body = {
        "name": name,
        "algorithm": algorithm,
        "input_snapshot": input_snapshot,
        "train_fraction": train_fraction,
        "seed": seed,
    }
    if hparams is not None:
        try:
            body["hyperparameters"] = json.loads(hparams)
        except ValueError as exc:
            raise click.UsageError(f"--hyperparameters is not valid JSON: {exc}")
    if artifact is not None:
        body["artifact"] = artifact
    if features is not None:
        body["input_features"] = [f.strip() for f in features.split(",") if f.strip()]
    if target is not None:
        body["target"] = target
    if framework_name or framework_version:
        body["framework"] = {"name": framework_name, "version": framework_version}
    _request(obj, "POST", "/runs", json_body=body)


@run.command("show")
@click.argument("run_id")
@click.pass_obj
def run_show(obj, run_id):
    _request(obj, "GET", f"/runs/{run_id}")


# -- model ----------------------------------------------------------------------


@cli.group()
def model():
    """Model records and lifecycle."""


@model.command("list")
@click.option("--name", default=None)
@click.pass_obj
def model_list(obj, name):
    _request(obj, "GET", "/models", params={"name": name})


@model.command("show")
@click.argument("model_id")
@click.pass_obj
def model_show(obj, model_id):
    _request(obj, "GET", f"/models/{model_id}")


@model.command("history")
@click.argument("name")
@click.pass_obj
def model_history(obj, name):
    _request(obj, "GET", f"/history/{name}")


@model.command("status")
@click.argument("model_id")
@click.argument("status")
@click.pass_obj
def model_status(obj, model_id, status):
    _request(obj, "POST", f"/models/{model_id}/status", json_body={"status": status})


@model.command("reproduce")
@click.argument("model_id")
@click.pass_obj
def model_reproduce(obj, model_id):
    _request(obj, "POST", f"/models/{model_id}/reproduce")


@model.command("predict")
@click.argument("model_id")
@click.option("--rows", required=True, help="JSON list of feature maps.")
@click.pass_obj
def model_predict(obj, model_id, rows):
    try:
        parsed = json.loads(rows)
    except ValueError as exc:
        raise click.UsageError(f"--rows is not valid JSON: {exc}")
    _request(obj, "POST", f"/models/{model_id}/predict", json_body={"rows": parsed})


@model.command("evaluate")
@click.argument("model_id")
@click.option("--snapshot", "snapshot_id", required=True)
@click.pass_obj
def model_evaluate(obj, model_id, snapshot_id):
    _request(obj, "POST", f"/models/{model_id}/evaluate", json_body={"snapshot_id": snapshot_id})


@model.command("auto-evaluate")
@click.argument("model_id")
@click.pass_obj
def model_auto_evaluate(obj, model_id):
    _request(obj, "POST", f"/models/{model_id}/auto-evaluate")


@model.command("gate")
@click.argument("model_id")
@click.pass_obj
def model_gate(obj, model_id):
    _request(obj, "POST", f"/models/{model_id}/gate")


@model.command("bundle")
@click.argument("model_id")
@click.pass_obj
def model_bundle(obj, model_id):
    _request(obj, "POST", f"/models/{model_id}/bundle")


@model.command("fanout")
@click.argument("model_id")
@click.pass_obj
def model_fanout(obj, model_id):
    _request(obj, "POST", f"/models/{model_id}/fanout")


# -- evaluation --------------------------------------------------------------------


@cli.group()
def evaluation():
    """Evaluation reports."""


@evaluation.command("metrics")
@click.option("--y", required=True, help="JSON list of observed values.")
@click.option("--y-hat", required=True, help="JSON list of predictions.")
@click.pass_obj
def evaluation_metrics(obj, y, y_hat):
    try:
        body = {"y": json.loads(y), "y_hat": json.loads(y_hat)}
    except ValueError as exc:
        raise click.UsageError(f"vectors must be valid JSON: {exc}")
    _request(obj, "POST", "/metrics", json_body=body)


@evaluation.command("list")
@click.argument("model_id")
@click.option("--jsonl", is_flag=True, help="One report per line (export format).")
@click.pass_obj
def evaluation_list(obj, model_id, jsonl):
    payload = _request(obj, "GET", f"/models/{model_id}/evaluations", quiet=jsonl)
    if jsonl and payload is not None:
        for report in payload["reports"]:
            click.echo(canonical_json(report))
        for skip in payload["skips"]:
            click.echo(canonical_json({"skip": skip}))


# -- bundle ---------------------------------------------------------------------------


@cli.group()
def bundle():
    """Deployment bundles."""


@bundle.command("verify")
@click.option("--file", "path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--expected-hash", default=None)
@click.pass_obj
def bundle_verify(obj, path, expected_hash):
    _request(
        obj,
        "POST",
        "/bundles/verify",
        content=path.read_bytes(),
        params={"expected_hash": expected_hash},
    )


# -- deployment ---------------------------------------------------------------------------


@cli.group()
def deployment():
    """Deployments and production feedback."""


@deployment.command("create")
@click.option("--model", "model_id", required=True)
@click.option("--target", required=True)
@click.option("--delta", type=float, default=None, help="Page-Hinkley tolerance override.")
@click.option("--lambda", "lam", type=float, default=None, help="Page-Hinkley threshold override.")
@click.option("--auto-tune/--no-auto-tune", default=True, show_default=True)
@click.pass_obj
def deployment_create(obj, model_id, target, delta, lam, auto_tune):
    body = {"model_id": model_id, "target": target, "auto_tune": auto_tune}
    if delta is not None:
        body["delta"] = delta
    if lam is not None:
        body["lambda"] = lam
    _request(obj, "POST", "/deployments", json_body=body)


@deployment.command("list")
@click.option("--target", default=None)
@click.option("--active", type=click.Choice(["true", "false"]), default=None)
@click.pass_obj
def deployment_list(obj, target, active):
    _request(obj, "GET", "/deployments", params={"target": target, "active": active})


@deployment.command("show")
@click.argument("deployment_id")
@click.pass_obj
def deployment_show(obj, deployment_id):
    _request(obj, "GET", f"/deployments/{deployment_id}")


@deployment.command("command")
@click.argument("deployment_id")
@click.pass_obj
def deployment_command(obj, deployment_id):
    _request(obj, "GET", f"/deployments/{deployment_id}/command")


@deployment.command("feedback")
@click.argument("deployment_id")
@click.option("--file", "path", type=click.Path(exists=True, path_type=Path), required=True,
              help="Line-delimited JSON feedback events.")
@click.pass_obj
def deployment_feedback(obj, deployment_id, path):
    _request(
        obj,
        "POST",
        f"/deployments/{deployment_id}/feedback",
        content=path.read_bytes(),
        headers={"content-type": "application/x-ndjson"},
    )


@deployment.command("drift")
@click.argument("deployment_id")
@click.pass_obj
def deployment_drift(obj, deployment_id):
    _request(obj, "GET", f"/deployments/{deployment_id}/drift")


@deployment.command("reset-drift")
@click.argument("deployment_id")
@click.pass_obj
def deployment_reset_drift(obj, deployment_id):
    _request(obj, "POST", f"/deployments/{deployment_id}/drift/reset")


@deployment.command("snapshot")
@click.argument("deployment_id")
@click.option("--last", type=int, default=None)
@click.option("--start-seq", type=int, default=None)
@click.option("--end-seq", type=int, default=None)
@click.pass_obj
def deployment_snapshot(obj, deployment_id, last, start_seq, end_seq):
    body = {}
    if last is not None:
        body["last"] = last
    if start_seq is not None:
        body["start_seq"] = start_seq
    if end_seq is not None:
        body["end_seq"] = end_seq
    _request(obj, "POST", f"/deployments/{deployment_id}/snapshot", json_body=body)


@deployment.command("tune")
@click.argument("deployment_id")
@click.pass_obj
def deployment_tune(obj, deployment_id):
    _request(obj, "POST", f"/deployments/{deployment_id}/tune")


# -- job -----------------------------------------------------------------------------------


@cli.group()
def job():
    """Tuning jobs."""


@job.command("list")
@click.option("--status", default=None)
@click.pass_obj
def job_list(obj, status):
    _request(obj, "GET", "/jobs", params={"status": status})


@job.command("show")
@click.argument("job_id")
@click.pass_obj
def job_show(obj, job_id):
    _request(obj, "GET", f"/jobs/{job_id}")


@job.command("run")
@click.argument("job_id")
@click.pass_obj
def job_run(obj, job_id):
    _request(obj, "POST", f"/jobs/{job_id}/run")


@job.command("cancel")
@click.argument("job_id")
@click.pass_obj
def job_cancel(obj, job_id):
    _request(obj, "POST", f"/jobs/{job_id}/cancel")


# -- notification / registry ------------------------------------------------------------------


@cli.group()
def notification():
    """Operator notifications."""


@notification.command("list")
@click.pass_obj
def notification_list(obj):
    _request(obj, "GET", "/notifications")


@cli.group()
def registry():
    """Registry-wide operations."""


@registry.command("audit")
@click.pass_obj
def registry_audit(obj):
    payload = _request(obj, "GET", "/audit")
    if payload is not None and not payload["ok"]:
        sys.exit(1)


# -- service -----------------------------------------------------------------------------------


@cli.group()
def service():
    """Run and inspect the service itself."""


@service.command("health")
@click.pass_obj
def service_health(obj):
    _request(obj, "GET", "/health")


@service.command("api-doc")
def service_api_doc():
    from .api import generate_api_doc

    click.echo(generate_api_doc(), nl=False)


@service.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8787, show_default=True)
@click.option("--data-dir", default=None, help="Overrides config / MMGR_DATA_DIR.")
@click.pass_obj
def service_serve(obj, host, port, data_dir):
    import uvicorn

    from .api import create_app
    from .config import load_config
    from .service import ModelService

    config = load_config(obj.config_path, data_dir=data_dir)
    app = create_app(ModelService(config))
    uvicorn.run(app, host=host, port=port, log_level="info")


# -- agent ----------------------------------------------------------------------------------------


def _load_process(path: Path):
    from .agent import ProcessSpec

    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise click.UsageError(f"process spec is not valid JSON: {exc}")
    return ProcessSpec(
        features=tuple((f[0], float(f[1]), float(f[2])) for f in raw["features"]),
        coefficients=tuple(float(c) for c in raw["coefficients"]),
        intercept=float(raw["intercept"]),
        noise_sigma=float(raw.get("noise_sigma", 0.0)),
        seed=int(raw.get("seed", 0)),
        drift=tuple(
            (int(d[0]), tuple(float(c) for c in d[1]), float(d[2]))
            for d in raw.get("drift", [])
        ),
    )


@cli.group()
def agent():
    """Simulated edge agent (client of the public API)."""


@agent.command("run")
@click.option("--deployment", "deployment_id", required=True)
@click.option("--process", "process_path", type=click.Path(exists=True, path_type=Path),
              required=True, help="JSON process spec.")
@click.option("--steps", type=int, required=True)
@click.option("--poll-interval", type=int, default=10, show_default=True)
@click.option("--flush-every", type=int, default=1, show_default=True)
@click.option("--report", "report_path", type=click.Path(path_type=Path), default=None,
              help="Write the line-delimited agent report here.")
@click.pass_obj
def agent_run(obj, deployment_id, process_path, steps, poll_interval, flush_every, report_path):
    from .agent import run_agent

    process = _load_process(process_path)
    report = run_agent(
        obj.client,
        deployment_id,
        process,
        steps,
        poll_interval=poll_interval,
        flush_every=flush_every,
    )
    if report_path is not None:
        report_path.write_text(report.to_jsonl(), encoding="utf-8")
    click.echo(canonical_json(report.as_dict()))


@agent.command("gen-csv")
@click.option("--process", "process_path", type=click.Path(exists=True, path_type=Path),
              required=True)
@click.option("--n", type=int, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
def agent_gen_csv(process_path, n, seed, out):
    from .agent import generate_training_csv

    process = _load_process(process_path)
    out.write_bytes(generate_training_csv(process, n, seed))
    click.echo(f"wrote {n} rows to {out}")


if __name__ == "__main__":
    main()
