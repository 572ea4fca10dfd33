"""Model evaluation: accuracy metrics, automatic evaluation over connected
snapshots, and the promotion gate.

The auto-evaluation closure starts at the model's training snapshot and
walks compatible_with edges (both ways, they are symmetric) plus
newer_recording_of edges toward newer recordings only: a model is checked
against data that succeeds or parallels its training data, never against
data its training set already superseded.
"""

from __future__ import annotations

import math
from typing import Sequence

from .errors import InconclusiveError, SchemaError, ValidationError
from .lineage import LineageGraph
from .registry import GateVerdict, Registry
from .store import SnapshotStore
from .tabular import FLOAT


def compute_metrics(y: Sequence[float], y_hat: Sequence[float]) -> dict:
    """rmse / mae / r2 over paired vectors, single accumulation pass per sum.

    r2 is 0 when the target is constant and predictions are exact; a constant
    target with nonzero error is rejected instead of returning -inf.
    """
    if len(y) != len(y_hat):
        raise ValidationError(f"length mismatch: {len(y)} vs {len(y_hat)}")
    n = len(y)
    if n == 0:
        raise ValidationError("metrics need at least one row")
    for v in y:
        if not math.isfinite(v):
            raise ValidationError("non-finite value in y")
    for v in y_hat:
        if not math.isfinite(v):
            raise ValidationError("non-finite value in y_hat")
    mean = 0.0
    for v in y:
        mean += v
    mean /= n
    sse = 0.0
    sae = 0.0
    sst = 0.0
    for yi, pi in zip(y, y_hat):
        e = yi - pi
        sse += e * e
        sae += abs(e)
        d = yi - mean
        sst += d * d
    rmse = math.sqrt(sse / n)
    mae = sae / n
    if sst == 0.0:
        if sse == 0.0:
            r2 = 0.0
        else:
            raise ValidationError(
                "target is constant but predictions are not exact",
                {"reason": "degenerate_target"},
            )
    else:
        r2 = 1.0 - sse / sst
    return {"rmse": rmse, "mae": mae, "r2": r2, "n": n}


class EvalEngine:
    def __init__(
        self,
        registry: Registry,
        store: SnapshotStore,
        lineage: LineageGraph,
        gate_epsilon: float = 0.0,
        gate_abs_factor: float = 1.05,
    ):
        self.registry = registry
        self.store = store
        self.lineage = lineage
        self.gate_epsilon = gate_epsilon
        self.gate_abs_factor = gate_abs_factor

    def evaluate(self, model_id: str, snapshot_id: str) -> dict:
        """Evaluate one model on one snapshot; persists the report and the
        evaluated_on edge, idempotently per (model, snapshot)."""
        model = self.registry.load_linear_model(model_id)
        table = self.store.materialize(snapshot_id)
        missing = [
            c
            for c in (*model.feature_names, model.target_name)
            if table.column_type(c) != FLOAT
        ]
        if missing:
            raise SchemaError(
                "snapshot lacks required numeric columns: " + ", ".join(missing),
                {"missing": missing, "snapshot": snapshot_id},
            )
        if table.row_count == 0:
            raise ValidationError("snapshot has no rows", {"snapshot": snapshot_id})
        y = table.float_column(model.target_name)
        y_hat = model.predict_table(table)
        metrics = compute_metrics(y, y_hat)
        report = self.registry.upsert_evaluation(model_id, snapshot_id, metrics)
        if not self.lineage.has_link(model_id, snapshot_id, "evaluated_on"):
            self.lineage.add_link(model_id, snapshot_id, "evaluated_on")
        return report

    def eval_closure(self, snapshot_id: str) -> list[str]:
        """Snapshot ids auto-evaluation covers beyond the training snapshot."""
        reachable = self.lineage.multi_connected(
            snapshot_id, [("compatible_with", "out"), ("newer_recording_of", "in")]
        )
        known = []
        for artifact in reachable:
            if self.registry.db.query_one(
                "SELECT 1 FROM snapshots WHERE id = ?", (artifact,)
            ):
                known.append(artifact)
        return known

    def auto_evaluate(self, model_id: str) -> dict:
        record = self.registry.get_model(model_id)
        run = self.registry.get_run(record.created_by_run)
        train_snapshot = run.input_snapshot
        targets = [train_snapshot] + [
            s for s in self.eval_closure(train_snapshot) if s != train_snapshot
        ]
        reports = []
        skips = []
        for snapshot_id in targets:
            try:
                reports.append(self.evaluate(model_id, snapshot_id))
            except (SchemaError, ValidationError) as exc:
                self.registry.record_skip(model_id, snapshot_id, exc.message)
                skips.append({"snapshot_id": snapshot_id, "reason": exc.message})
        return {"reports": reports, "skips": skips}

    def gate(self, candidate_id: str) -> GateVerdict:
        """Promotion gate: candidate must match or beat its predecessor's RMSE
        on every commonly evaluable snapshot, or stay within the absolute
        fallback when it has no predecessor."""
        candidate = self.registry.get_model(candidate_id)
        result = self.auto_evaluate(candidate_id)
        cand_reports = {r["snapshot_id"]: r for r in result["reports"]}
        if not cand_reports:
            raise InconclusiveError(
                "candidate has no evaluable snapshot", {"model": candidate_id}
            )
        run = self.registry.get_run(candidate.created_by_run)
        train_snapshot = run.input_snapshot
        epsilon = self.gate_epsilon
        checks: list[dict] = []

        if candidate.predecessor is not None:
            compared = 0
            for snapshot_id in sorted(cand_reports):
                report = cand_reports[snapshot_id]
                pred_report = self.registry.get_evaluation(candidate.predecessor, snapshot_id)
                if pred_report is None:
                    try:
                        pred_report = self.evaluate(candidate.predecessor, snapshot_id)
                    except (SchemaError, ValidationError) as exc:
                        self.registry.record_skip(
                            candidate.predecessor, snapshot_id, exc.message
                        )
                        continue
                cand_rmse = report["metrics"]["rmse"]
                pred_rmse = pred_report["metrics"]["rmse"]
                passed = cand_rmse <= pred_rmse * (1.0 + epsilon)
                checks.append(
                    {
                        "snapshot_id": snapshot_id,
                        "candidate_rmse": cand_rmse,
                        "predecessor_rmse": pred_rmse,
                        "threshold": None,
                        "pass": passed,
                    }
                )
                compared += 1
            if compared == 0:
                raise InconclusiveError(
                    "no snapshot evaluable by both candidate and predecessor",
                    {"candidate": candidate_id, "predecessor": candidate.predecessor},
                )
        else:
            train_rmse = cand_reports[train_snapshot]["metrics"]["rmse"]
            threshold = self.gate_abs_factor * train_rmse
            for snapshot_id in sorted(cand_reports):
                cand_rmse = cand_reports[snapshot_id]["metrics"]["rmse"]
                checks.append(
                    {
                        "snapshot_id": snapshot_id,
                        "candidate_rmse": cand_rmse,
                        "predecessor_rmse": None,
                        "threshold": threshold,
                        "pass": cand_rmse <= threshold,
                    }
                )

        overall = all(c["pass"] for c in checks)
        return self.registry.insert_verdict(
            candidate_id, candidate.predecessor, epsilon, overall, checks
        )
