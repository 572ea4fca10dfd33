"""Built-in linear model runtime: ordinary least squares with optional ridge
penalty, plus warm-start tuning that shrinks toward an existing model.

Fit solves (A'A + P)b = A'y where A is the design matrix with a leading
intercept column and P = diag(0, ridge, ..., ridge); the intercept is never
penalized. Tune solves (A'A + P + tau*I)b = A'y + tau*b_base over the full
parameter vector including the intercept, so tau -> inf returns the base
model and tau = 0 is a plain refit. Both use the in-package unblocked
Cholesky solver so the arithmetic order is fixed; serialized models are
bit-stable for identical inputs.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import CorruptionError, SchemaError, ValidationError
from .rng import split_rows
from .tabular import FLOAT, Table

MAGIC = b"MFLM"
FORMAT_VERSION = 1
MODEL_FORMAT_TAG = "MFLM/1"

ALGORITHM_FIT = "builtin.linear"
ALGORITHM_TUNE = "builtin.linear-tune"


@dataclass(frozen=True)
class LinearModel:
    feature_names: tuple[str, ...]
    coefficients: tuple[float, ...]
    intercept: float
    train_residual_std: float
    target_name: str

    def __post_init__(self):
        if len(self.feature_names) != len(self.coefficients):
            raise ValidationError("coefficient count must match feature count")
        values = (*self.coefficients, self.intercept, self.train_residual_std)
        if not all(math.isfinite(v) for v in values):
            raise ValidationError("model parameters must be finite")

    def predict_row(self, features: Mapping[str, float]) -> float:
        acc = self.intercept
        for name, coef in zip(self.feature_names, self.coefficients):
            if name not in features:
                raise SchemaError(f"missing feature {name}", {"missing": [name]})
            acc += coef * float(features[name])
        return acc

    def predict_table(self, table: Table) -> list[float]:
        missing = [n for n in self.feature_names if table.column_type(n) != FLOAT]
        if missing:
            raise SchemaError(
                "missing or non-numeric feature columns: " + ", ".join(missing),
                {"missing": missing},
            )
        n = table.row_count
        out = np.full(n, self.intercept, dtype=np.float64)
        for name, coef in zip(self.feature_names, self.coefficients):
            out += coef * np.asarray(table.float_column(name), dtype=np.float64)
        return [float(v) for v in out]


def serialize_model(model: LinearModel) -> bytes:
    """MFLM/1 byte layout; see docs/formats.md."""
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<H", FORMAT_VERSION))
    raw = model.target_name.encode("utf-8")
    out.write(struct.pack("<H", len(raw)))
    out.write(raw)
    out.write(struct.pack("<H", len(model.feature_names)))
    for name in model.feature_names:
        raw = name.encode("utf-8")
        out.write(struct.pack("<H", len(raw)))
        out.write(raw)
    out.write(struct.pack(f"<{len(model.coefficients)}d", *model.coefficients))
    out.write(struct.pack("<d", model.intercept))
    out.write(struct.pack("<d", model.train_residual_std))
    return out.getvalue()


def deserialize_model(data: bytes) -> LinearModel:
    try:
        pos = 0

        def take(n: int) -> bytes:
            nonlocal pos
            if pos + n > len(data):
                raise CorruptionError("truncated model artifact")
            chunk = data[pos : pos + n]
            pos += n
            return chunk

        if take(4) != MAGIC:
            raise CorruptionError("bad model artifact magic")
        (version,) = struct.unpack("<H", take(2))
        if version != FORMAT_VERSION:
            raise CorruptionError(f"unsupported model format version {version}")
        (tlen,) = struct.unpack("<H", take(2))
        target = take(tlen).decode("utf-8")
        (count,) = struct.unpack("<H", take(2))
        names = []
        for _ in range(count):
            (nlen,) = struct.unpack("<H", take(2))
            names.append(take(nlen).decode("utf-8"))
        coefs = struct.unpack(f"<{count}d", take(8 * count))
        (intercept,) = struct.unpack("<d", take(8))
        (resid_std,) = struct.unpack("<d", take(8))
        if pos != len(data):
            raise CorruptionError("trailing bytes after model artifact")
    except (struct.error, UnicodeDecodeError) as exc:
        raise CorruptionError(f"malformed model artifact: {exc}")
    return LinearModel(
        feature_names=tuple(names),
        coefficients=tuple(coefs),
        intercept=float(intercept),
        train_residual_std=float(resid_std),
        target_name=target,
    )


def is_model_artifact(data: bytes) -> bool:
    return data[:4] == MAGIC


def _cholesky_solve(gram: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Unblocked Cholesky + triangular solves, fixed left-to-right order.

    Raises on a non-positive pivot relative to the original diagonal, which
    is how rank deficiency surfaces for ridge = 0.
    """
    m = gram.shape[0]
    lower = np.zeros_like(gram)
    for j in range(m):
        pivot = gram[j, j] - float(lower[j, :j] @ lower[j, :j])
        if not (pivot > 1e-12 * max(abs(gram[j, j]), 1e-300)):
            raise ValidationError(
                "normal equations are singular (collinear or constant features); "
                "use a ridge penalty > 0",
                {"reason": "singular", "pivot_index": j},
            )
        lower[j, j] = math.sqrt(pivot)
        for i in range(j + 1, m):
            lower[i, j] = (gram[i, j] - float(lower[i, :j] @ lower[j, :j])) / lower[j, j]
    y = np.zeros(m)
    for i in range(m):
        y[i] = (rhs[i] - float(lower[i, :i] @ y[:i])) / lower[i, i]
    beta = np.zeros(m)
    for i in range(m - 1, -1, -1):
        beta[i] = (y[i] - float(lower[i + 1 :, i] @ beta[i + 1 :])) / lower[i, i]
    return beta


def _design_matrix(
    table: Table, feature_names: Sequence[str], target_name: str, row_order: Sequence[int]
) -> tuple[np.ndarray, np.ndarray]:
    missing = [
        n for n in (*feature_names, target_name) if table.column_type(n) != FLOAT
    ]
    if missing:
        raise SchemaError(
            "missing or non-numeric columns: " + ", ".join(missing), {"missing": missing}
        )
    idx = np.asarray(row_order, dtype=np.intp)
    a = np.empty((len(idx), len(feature_names) + 1), dtype=np.float64)
    a[:, 0] = 1.0
    for j, name in enumerate(feature_names, start=1):
        a[:, j] = np.asarray(table.float_column(name), dtype=np.float64)[idx]
    y = np.asarray(table.float_column(target_name), dtype=np.float64)[idx]
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(y))):
        raise ValidationError("non-finite values in training data")
    return a, y


def _residual_std(a: np.ndarray, y: np.ndarray, beta: np.ndarray) -> float:
    resid = y - a @ beta
    if resid.shape[0] < 2:
        return 0.0
    return float(np.std(resid, ddof=1))


def fit(
    table: Table,
    feature_names: Sequence[str],
    target_name: str,
    ridge: float = 0.0,
    seed: int = 0,
    train_fraction: float = 1.0,
) -> LinearModel:
    if not (isinstance(ridge, (int, float)) and math.isfinite(ridge) and ridge >= 0):
        raise ValidationError("ridge penalty must be a finite real >= 0")
    if not (0.0 < train_fraction <= 1.0):
        raise ValidationError("train_fraction must be in (0, 1]")
    names = list(feature_names)
    if len(set(names)) != len(names):
        raise ValidationError("duplicate feature names")
    if target_name in names:
        raise ValidationError("target cannot also be a feature")
    missing = [n for n in (*names, target_name) if table.column_type(n) != FLOAT]
    if missing:
        raise SchemaError(
            "missing or non-numeric columns: " + ", ".join(missing), {"missing": missing}
        )
    train_idx, _ = split_rows(table.row_count, train_fraction, seed)
    if len(train_idx) < len(names) + 1:
        raise ValidationError(
            f"need at least {len(names) + 1} training rows, have {len(train_idx)}"
        )
    a, y = _design_matrix(table, names, target_name, train_idx)
    gram = a.T @ a
    for j in range(1, gram.shape[0]):
        gram[j, j] += ridge
    beta = _cholesky_solve(gram, a.T @ y)
    return LinearModel(
        feature_names=tuple(names),
        coefficients=tuple(float(v) for v in beta[1:]),
        intercept=float(beta[0]),
        train_residual_std=_residual_std(a, y, beta),
        target_name=target_name,
    )


def tune(base: LinearModel, table: Table, ridge: float = 0.0, shrink: float = 0.0) -> LinearModel:
    """Re-estimate coefficients on new data, keeping the feature set fixed and
    shrinking toward the base model with proximal weight `shrink`."""
    if not (isinstance(ridge, (int, float)) and math.isfinite(ridge) and ridge >= 0):
        raise ValidationError("ridge penalty must be a finite real >= 0")
    if not (isinstance(shrink, (int, float)) and math.isfinite(shrink) and shrink >= 0):
        raise ValidationError("shrink weight must be a finite real >= 0")
    names = list(base.feature_names)
    n = table.row_count
    if n < len(names) + 1:
        raise ValidationError(f"need at least {len(names) + 1} rows, have {n}")
    a, y = _design_matrix(table, names, base.target_name, range(n))
    gram = a.T @ a
    for j in range(1, gram.shape[0]):
        gram[j, j] += ridge
    for j in range(gram.shape[0]):
        gram[j, j] += shrink
    base_beta = np.asarray([base.intercept, *base.coefficients], dtype=np.float64)
    rhs = a.T @ y + shrink * base_beta
    beta = _cholesky_solve(gram, rhs)
    return LinearModel(
        feature_names=tuple(names),
        coefficients=tuple(float(v) for v in beta[1:]),
        intercept=float(beta[0]),
        train_residual_std=_residual_std(a, y, beta),
        target_name=base.target_name,
    )
