"""Production feedback ingestion and Page-Hinkley concept-drift detection.

The statistic runs on absolute residuals |observation - prediction| with a
fixed, documented arithmetic order (see docs/formats.md), so an independent
replay of the same event log reproduces the state bit-exactly:

    n' = n + 1
    mean' = mean + (e - mean) / n'
    ph_m' = ph_m + (e - mean' - delta)
    ph_min' = min(ph_min, ph_m')
    alarm' = alarm or (ph_m' - ph_min' > lambda)

Alarms latch until reset_drift, which also starts a fresh feedback epoch
(sequence numbers restart at 1; the log itself is never rewritten).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from datetime import datetime, timezone

from .errors import NotFoundError, OrderingError, SchemaError, StateError, ValidationError
from .lineage import LineageGraph
from .registry import Registry
from .store import SnapshotStore, Snapshot
from .tabular import FLOAT, make_table


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass(frozen=True)
class DriftState:
    deployment_id: str
    epoch: int
    n: int
    mean_abs_err: float
    ph_m: float
    ph_min: float
    alarm: bool
    alarm_at: int | None

    def as_dict(self) -> dict:
        return {
            "deployment_id": self.deployment_id,
            "epoch": self.epoch,
            "n": self.n,
            "mean_abs_err": self.mean_abs_err,
            "ph_m": self.ph_m,
            "ph_min": self.ph_min,
            "alarm": self.alarm,
            "alarm_at": self.alarm_at,
        }


def page_hinkley_update(state: DriftState, e: float, delta: float, lam: float) -> DriftState:
    """One detector step on a nonnegative residual magnitude."""
    if not (isinstance(e, (int, float)) and math.isfinite(e)):
        raise ValidationError("residual magnitude must be finite")
    if e < 0:
        raise ValidationError("residual magnitude must be >= 0")
    n = state.n + 1
    mean = state.mean_abs_err + (e - state.mean_abs_err) / n
    ph_m = state.ph_m + (e - mean - delta)
    ph_min = min(state.ph_min, ph_m)
    newly_alarmed = (not state.alarm) and (ph_m - ph_min > lam)
    return replace(
        state,
        n=n,
        mean_abs_err=mean,
        ph_m=ph_m,
        ph_min=ph_min,
        alarm=state.alarm or newly_alarmed,
        alarm_at=n if newly_alarmed else state.alarm_at,
    )


class DriftMonitor:
    def __init__(self, registry: Registry, store: SnapshotStore, lineage: LineageGraph):
        self.registry = registry
        self.store = store
        self.lineage = lineage

    def state(self, deployment_id: str) -> DriftState:
        self.registry.get_deployment(deployment_id)
        row = self.registry.db.query_one(
            "SELECT * FROM drift_states WHERE deployment_id = ?", (deployment_id,)
        )
        if row is None:
            raise NotFoundError(f"no drift state for {deployment_id}")
        return DriftState(
            deployment_id=row["deployment_id"],
            epoch=row["epoch"],
            n=row["n"],
            mean_abs_err=row["mean_abs_err"],
            ph_m=row["ph_m"],
            ph_min=row["ph_min"],
            alarm=bool(row["alarm"]),
            alarm_at=row["alarm_at"],
        )

    def _write_state(self, state: DriftState) -> None:
        with self.registry.db.tx() as conn:
            conn.execute(
                "UPDATE drift_states SET epoch=?, n=?, mean_abs_err=?, ph_m=?, ph_min=?, "
                "alarm=?, alarm_at=? WHERE deployment_id=?",
                (
                    state.epoch,
                    state.n,
                    state.mean_abs_err,
                    state.ph_m,
                    state.ph_min,
                    1 if state.alarm else 0,
                    state.alarm_at,
                    state.deployment_id,
                ),
            )

    @staticmethod
    def _validate_event(event: dict) -> tuple[int, dict, float, float, str]:
        seq = event.get("seq")
        if not isinstance(seq, int) or isinstance(seq, bool) or seq < 1:
            raise ValidationError("seq must be a positive integer")
        prediction = event.get("prediction")
        observation = event.get("observation")
        for label, value in (("prediction", prediction), ("observation", observation)):
            if not isinstance(value, (int, float)) or isinstance(value, bool) or not math.isfinite(value):
                raise ValidationError(f"{label} must be a finite number")
        features = event.get("features")
        if not isinstance(features, dict):
            raise ValidationError("features must be a map")
        return seq, features, float(prediction), float(observation), event.get("ts") or _now()

    def ingest(self, deployment_id: str, event: dict) -> tuple[DriftState, bool]:
        """Append one feedback event; returns (state, alarm fired just now)."""
        state, alarm_at = self.ingest_batch(deployment_id, [event])
        return state, alarm_at is not None

    def ingest_batch(
        self, deployment_id: str, events: list[dict]
    ) -> tuple[DriftState, int | None]:
        """Append feedback events in order; returns the final state and the
        sequence number at which the alarm newly latched, if it did.

        Sequence numbers must continue exactly from the last accepted event
        (contiguous from 1 within the epoch). On a bad event, everything
        before it is kept and the rest is rejected.
        """
        deployment = self.registry.get_deployment(deployment_id)
        if not deployment.active:
            raise StateError(
                f"deployment {deployment_id} is not active", {"deployment": deployment_id}
            )
        state = self.state(deployment_id)
        rows = []
        newly_alarmed_at: int | None = None
        error: Exception | None = None
        error_index = len(events)
        for i, event in enumerate(events):
            try:
                seq, features, prediction, observation, ts = self._validate_event(event)
                expected = state.n + 1
                if seq != expected:
                    raise OrderingError(
                        f"expected seq {expected}, got {seq}",
                        {"expected": expected, "got": seq, "deployment": deployment_id},
                    )
            except (ValidationError, OrderingError) as exc:
                error, error_index = exc, i
                break
            rows.append(
                (
                    deployment_id,
                    state.epoch,
                    seq,
                    json.dumps(features, sort_keys=True),
                    prediction,
                    observation,
                    ts,
                )
            )
            before = state
            state = page_hinkley_update(
                state, abs(observation - prediction), deployment.delta, deployment.lam
            )
            if state.alarm and not before.alarm:
                newly_alarmed_at = state.alarm_at
        if rows:
            with self.registry.db.tx() as conn:
                conn.executemany(
                    "INSERT INTO feedback(deployment_id, epoch, seq, features_json, "
                    "prediction, observation, ts) VALUES(?,?,?,?,?,?,?)",
                    rows,
                )
                self._write_state(state)
        if error is not None:
            error.detail = {**getattr(error, "detail", {}), "event_index": error_index}
            if newly_alarmed_at is not None:
                error.detail["alarm_at"] = newly_alarmed_at
            raise error
        return state, newly_alarmed_at

    def reset(self, deployment_id: str) -> DriftState:
        """Zero the statistic and start a new epoch; the log is untouched."""
        state = self.state(deployment_id)
        fresh = DriftState(
            deployment_id=deployment_id,
            epoch=state.epoch + 1,
            n=0,
            mean_abs_err=0.0,
            ph_m=0.0,
            ph_min=0.0,
            alarm=False,
            alarm_at=None,
        )
        self._write_state(fresh)
        return fresh

    def feedback_events(
        self,
        deployment_id: str,
        start_seq: int | None = None,
        end_seq: int | None = None,
        last: int | None = None,
    ) -> list[dict]:
        """Events from the current epoch, by inclusive seq range or last-N."""
        state = self.state(deployment_id)
        if last is not None:
            if last < 1:
                raise ValidationError("last must be >= 1")
            start_seq = max(1, state.n - last + 1)
            end_seq = state.n
        else:
            start_seq = 1 if start_seq is None else start_seq
            end_seq = state.n if end_seq is None else end_seq
        if start_seq > end_seq or end_seq < 1:
            raise ValidationError(
                "empty feedback range",
                {"start_seq": start_seq, "end_seq": end_seq, "available": state.n},
            )
        rows = self.registry.db.query(
            "SELECT * FROM feedback WHERE deployment_id = ? AND epoch = ? AND seq BETWEEN ? AND ? "
            "ORDER BY seq",
            (deployment_id, state.epoch, start_seq, end_seq),
        )
        if not rows:
            raise ValidationError(
                "empty feedback range",
                {"start_seq": start_seq, "end_seq": end_seq, "available": state.n},
            )
        return [
            {
                "deployment_id": r["deployment_id"],
                "epoch": r["epoch"],
                "seq": r["seq"],
                "features": json.loads(r["features_json"]),
                "prediction": r["prediction"],
                "observation": r["observation"],
                "ts": r["ts"],
            }
            for r in rows
        ]

    def feedback_to_snapshot(
        self,
        deployment_id: str,
        start_seq: int | None = None,
        end_seq: int | None = None,
        last: int | None = None,
    ) -> Snapshot:
        """Materialize logged feedback as a snapshot of the deployment's
        dataset, linked newer_recording_of to the training snapshot."""
        deployment = self.registry.get_deployment(deployment_id)
        events = self.feedback_events(deployment_id, start_seq, end_seq, last)
        model = self.registry.get_model(deployment.model_id)
        run = self.registry.get_run(model.created_by_run)
        train_snapshot = self.store.get_snapshot(run.input_snapshot)

        columns: dict[str, list] = {name: [] for name in model.features}
        columns[model.target] = []
        for event in events:
            for name in model.features:
                value = event["features"].get(name)
                if not isinstance(value, (int, float)) or isinstance(value, bool):
                    raise SchemaError(
                        f"event seq {event['seq']} lacks numeric feature {name}",
                        {"missing": [name], "seq": event["seq"]},
                    )
                columns[name].append(float(value))
            columns[model.target].append(float(event["observation"]))
        schema = [(name, FLOAT) for name in (*model.features, model.target)]
        table = make_table(schema, columns)

        with self.registry.db.tx():
            snapshot = self.store.ingest_table(
                train_snapshot.dataset_id, table, parent=train_snapshot.id
            )
            self.lineage.add_link(
                snapshot.id,
                train_snapshot.id,
                "newer_recording_of",
                annotation=f"feedback {deployment_id} seq {events[0]['seq']}..{events[-1]['seq']}",
            )
        return snapshot
