from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest
from fastapi.testclient import TestClient

sys.path.insert(0, str(Path(__file__).parent))

from mmgr.api import create_app
from mmgr.config import ServiceConfig
from mmgr.service import ModelService


@pytest.fixture
def svc(tmp_path):
    service = ModelService(ServiceConfig(data_dir=tmp_path / "data"))
    yield service
    service.close()


@pytest.fixture
def client(svc):
    with TestClient(create_app(svc), raise_server_exceptions=False) as c:
        yield c


def linear_csv(slope=2.0, intercept=1.0, xs=(0.0, 1.0, 2.0)) -> bytes:
    lines = ["x,y"] + [f"{x},{intercept + slope * x}" for x in xs]
    return ("\n".join(lines) + "\n").encode()


def noisy_csv(seed, n=200, p=1, sigma=0.1, coefs=None, intercept=0.5) -> bytes:
    rng = np.random.default_rng(seed)
    coefs = list(coefs) if coefs is not None else [2.0] * p
    names = [f"x{j}" for j in range(p)]
    x = rng.uniform(-1.0, 1.0, size=(n, p))
    y = intercept + x @ np.asarray(coefs) + sigma * rng.standard_normal(n)
    lines = [",".join(names + ["y"])]
    for i in range(n):
        lines.append(",".join([repr(float(v)) for v in x[i]] + [repr(float(y[i]))]))
    return ("\n".join(lines) + "\n").encode()


_seed_counter = 0


def seed_model(service: ModelService, *, name="plant", csv=None, dataset=None,
               ridge=0.0, seed=0, train_fraction=1.0, features=None, target="y"):
    """Dataset + snapshot + builtin run; returns (dataset, snapshot, run, model)."""
    global _seed_counter
    _seed_counter += 1
    ds = service.create_dataset(dataset or f"{name}-data-{_seed_counter}")
    snap = service.ingest_snapshot(ds.id, csv if csv is not None else linear_csv())
    features = features or [n for n, _ in snap.schema if n != target]
    run, model = service.record_run(
        name=name,
        algorithm="builtin.linear",
        hyperparameters={"lambda": ridge},
        input_snapshot=snap.id,
        train_fraction=train_fraction,
        seed=seed,
        input_features=features,
        target=target,
    )
    return ds, snap, run, model
