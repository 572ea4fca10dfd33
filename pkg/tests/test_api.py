from __future__ import annotations

import json

import pytest

from mmgr.api import OPS, generate_api_doc
from mmgr.errors import ERROR_CODES, HTTP_STATUS_BY_CODE

from conftest import linear_csv, noisy_csv


def make_dataset(client, name="d"):
    return client.post("/datasets", json={"name": name}).json()["id"]


def make_snapshot(client, ds, csv=None):
    r = client.post(f"/datasets/{ds}/snapshots", content=csv or linear_csv())
    assert r.status_code == 201, r.text
    return r.json()["id"]


def make_model(client, snap, name="m", features=("x",)):
    r = client.post(
        "/runs",
        json={
            "name": name,
            "algorithm": "builtin.linear",
            "input_snapshot": snap,
            "input_features": list(features),
            "target": "y",
        },
    )
    assert r.status_code == 201, r.text
    return r.json()["model"]["id"]


def test_unknown_model_is_404_envelope(client):
    r = client.get("/models/model-404")
    assert r.status_code == 404
    body = r.json()
    assert body["code"] == "not_found"
    assert "message" in body and "detail" in body


def test_ragged_csv_is_422_schema_with_row(client):
    ds = make_dataset(client)
    r = client.post(f"/datasets/{ds}/snapshots", content=b"x,y\n0\n")
    assert r.status_code == 422
    assert r.json()["code"] == "schema"
    assert r.json()["detail"]["row"] == 1


def test_cycle_is_409_with_path(client):
    ds = make_dataset(client)
    s1 = make_snapshot(client, ds)
    s2 = make_snapshot(client, ds, linear_csv(xs=(9.0, 10.0)))
    assert client.post("/links", json={"from": s1, "to": s2, "kind": "base_of"}).status_code == 201
    r = client.post("/links", json={"from": s2, "to": s1, "kind": "base_of"})
    assert r.status_code == 409
    assert r.json()["code"] == "cycle"
    assert r.json()["detail"]["path"] == [s2, s1, s2]


def test_malformed_json_body_is_validation(client):
    r = client.post("/datasets", content=b"{not json", headers={"content-type": "application/json"})
    assert r.status_code == 422
    assert r.json()["code"] == "validation"


def test_unknown_route_and_method_are_not_found(client):
    r = client.get("/definitely/not/here")
    assert r.status_code == 404
    assert r.json()["code"] == "not_found"
    r = client.delete("/health")
    assert r.status_code == 404
    assert r.json()["code"] == "not_found"


def test_missing_required_field_names_it(client):
    r = client.post("/datasets", json={"description": "x"})
    assert r.status_code == 422
    assert "name" in r.json()["message"]


def test_responses_are_canonical_json(client):
    ds = make_dataset(client)
    make_snapshot(client, ds)
    a = client.get(f"/datasets/{ds}").content
    b = client.get(f"/datasets/{ds}").content
    assert a == b
    parsed = json.loads(a)
    assert a == json.dumps(
        parsed, sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode()


def test_blob_round_trip_over_http(client):
    payload = b"\x00\x01binary\xff"
    r = client.post("/blobs", content=payload)
    assert r.status_code == 201
    digest = r.json()["hash"]
    got = client.get(f"/blobs/{digest}")
    assert got.status_code == 200
    assert got.content == payload


def test_snapshot_data_round_trips_floats(client):
    ds = make_dataset(client)
    snap = make_snapshot(client, ds, b"x\n0.1\n2.5e-3\n")
    data = client.get(f"/snapshots/{snap}/data").json()
    assert data["columns"]["x"] == [0.1, 0.0025]
    assert data["schema"] == [["x", "float"]]


def test_feedback_wire_format_and_line_errors(client):
    ds = make_dataset(client)
    snap = make_snapshot(client, ds, noisy_csv(2, n=40))
    model = make_model(client, snap, features=("x0",))
    assert client.post(f"/models/{model}/gate").json()["overall"]
    client.post(f"/models/{model}/status", json={"status": "validated"})
    dep = client.post(
        "/deployments", json={"model_id": model, "target": "t", "auto_tune": False}
    ).json()["id"]

    def line(seq):
        return json.dumps(
            {"deployment_id": dep, "seq": seq, "features": {"x0": 0.1},
             "prediction": 1.0, "observation": 1.0, "ts": "1970-01-01T00:00:01+00:00"}
        )

    body = "\n".join([line(1), line(2)]) + "\n"
    r = client.post(f"/deployments/{dep}/feedback", content=body.encode())
    assert r.status_code == 200
    assert r.json()["accepted"] == 2

    # third line has a gap; first lines of the batch stay ingested
    body = "\n".join([line(3), line(9)]) + "\n"
    r = client.post(f"/deployments/{dep}/feedback", content=body.encode())
    assert r.status_code == 422
    assert r.json()["code"] == "ordering"
    assert r.json()["detail"]["line"] == 2
    state = client.get(f"/deployments/{dep}/drift").json()
    assert state["n"] == 3


def test_api_parity_ops_table_vs_routes(client):
    app = client.app
    routes = {
        (m, r.path)
        for r in app.routes
        if hasattr(r, "methods") and r.methods
        for m in r.methods
        if m not in ("HEAD", "OPTIONS")
    }
    table = {(op.method, op.path) for op in OPS if op.method is not None}
    assert table <= routes, f"ops missing routes: {table - routes}"
    assert routes <= table, f"routes missing from op table: {routes - table}"


def test_cli_parity_every_op_has_a_command():
    from mmgr.cli import cli

    for op in OPS:
        noun, _, verb = op.cli.partition(" ")
        group = cli.commands.get(noun)
        assert group is not None, f"no CLI group {noun!r} for {op.op}"
        assert verb in group.commands, f"no CLI command {op.cli!r} for {op.op}"


def test_api_doc_lists_every_op():
    doc = generate_api_doc()
    for op in OPS:
        assert f"mmgr {op.cli}" in doc
        if op.path is not None:
            assert op.path in doc


def test_committed_api_doc_is_in_sync():
    from pathlib import Path

    committed = Path(__file__).parent.parent / "docs" / "api.md"
    assert committed.read_text(encoding="utf-8") == generate_api_doc()


def test_error_code_table_is_total():
    assert set(HTTP_STATUS_BY_CODE) == set(ERROR_CODES)


def test_inconclusive_maps_to_409(client):
    ds = make_dataset(client)
    snap = make_snapshot(client, ds, noisy_csv(3, n=30))
    m1 = make_model(client, snap, name="ic", features=("x0",))
    client.post(f"/models/{m1}/gate")
    client.post(f"/models/{m1}/status", json={"status": "validated"})
    other = make_snapshot(client, ds, b"w,z\n1,2\n2,4\n3,6\n")
    r = client.post(
        "/runs",
        json={
            "name": "ic",
            "algorithm": "builtin.linear",
            "input_snapshot": other,
            "input_features": ["w"],
            "target": "z",
        },
    )
    m2 = r.json()["model"]["id"]
    r = client.post(f"/models/{m2}/gate")
    assert r.status_code == 409
    assert r.json()["code"] == "inconclusive"


def test_lineage_export_via_http(client):
    ds = make_dataset(client)
    s1 = make_snapshot(client, ds)
    s2 = make_snapshot(client, ds, linear_csv(xs=(7.0, 8.0)))
    client.post("/links", json={"from": s1, "to": s2, "kind": "compatible_with"})
    r = client.get("/lineage/export")
    assert r.status_code == 200
    assert r.text == f"{s1}\tcompatible_with\t{s2}\n{s2}\tcompatible_with\t{s1}\n"
