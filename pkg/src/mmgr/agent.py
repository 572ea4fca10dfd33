"""Simulated edge agent: runs a deployed bundle against a synthetic linear
process with an injectable drift schedule and streams feedback to the
service over its public HTTP API.

The loop is step-driven and fully deterministic given (process spec, seed,
steps, service responses): feature draws, noise, and the synthetic
timestamps all derive from the step counter and the xorshift generator.
Between steps the agent pull-polls its deployment command endpoint and
atomically swaps bundles when told to.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone

import httpx

from .bundles import verify_bundle, version_satisfies
from .canonical import canonical_json
from .errors import StateError, UnsupportedError, ValidationError
from .rng import Xorshift64Star
from .runtime import deserialize_model
from .tabular import format_float

AGENT_VERSION = "1.0.0"


@dataclass(frozen=True)
class ProcessSpec:
    """Linear ground truth y = intercept + coef . x + noise, with optional
    stepwise drift of the coefficients."""

    features: tuple[tuple[str, float, float], ...]  # (name, low, high)
    coefficients: tuple[float, ...]
    intercept: float
    noise_sigma: float
    seed: int
    drift: tuple[tuple[int, tuple[float, ...], float], ...] = ()

    def __post_init__(self):
        if len(self.coefficients) != len(self.features):
            raise ValidationError("coefficient count must match feature count")
        values = [self.intercept, self.noise_sigma, *self.coefficients]
        for name, lo, hi in self.features:
            if not name:
                raise ValidationError("feature names must be non-empty")
            values.extend((lo, hi))
            if not lo < hi:
                raise ValidationError(f"feature {name} has an empty range")
        for _, coefs, icpt in self.drift:
            if len(coefs) != len(self.features):
                raise ValidationError("drift coefficient count must match feature count")
            values.extend((icpt, *coefs))
        if not all(isinstance(v, (int, float)) and math.isfinite(v) for v in values):
            raise ValidationError("process parameters must be finite")
        if self.noise_sigma < 0:
            raise ValidationError("noise sigma must be >= 0")
        steps = [t for t, _, _ in self.drift]
        if steps != sorted(steps) or len(set(steps)) != len(steps):
            raise ValidationError("drift steps must be strictly increasing")

    def params_at(self, step: int) -> tuple[tuple[float, ...], float]:
        coefs, intercept = self.coefficients, self.intercept
        for at, new_coefs, new_intercept in self.drift:
            if step >= at:
                coefs, intercept = tuple(new_coefs), new_intercept
        return coefs, intercept


def _step_ts(step: int) -> str:
    return datetime.fromtimestamp(step, tz=timezone.utc).isoformat()


def generate_training_csv(process: ProcessSpec, n: int, seed: int) -> bytes:
    """Deterministic synthetic CSV drawn from the process at step 0."""
    if n < 0:
        raise ValidationError("n must be >= 0")
    rng = Xorshift64Star(seed)
    names = [name for name, _, _ in process.features]
    target = "y"
    while target in names:
        target += "_"
    lines = [",".join((*names, target))]
    for _ in range(n):
        xs = []
        for _, lo, hi in process.features:
            xs.append(lo + rng.next_float() * (hi - lo))
        y = process.intercept
        for coef, x in zip(process.coefficients, xs):
            y += coef * x
        if process.noise_sigma > 0:
            y += process.noise_sigma * rng.normal()
        lines.append(",".join(format_float(v) for v in (*xs, y)))
    return ("\n".join(lines) + "\n").encode("utf-8")


@dataclass
class Segment:
    deployment_id: str
    bundle_hash: str
    start_step: int
    end_step: int = 0
    n: int = 0
    sse: float = 0.0

    @property
    def rmse(self) -> float:
        return math.sqrt(self.sse / self.n) if self.n else 0.0

    def as_dict(self) -> dict:
        return {
            "deployment_id": self.deployment_id,
            "bundle_hash": self.bundle_hash,
            "start_step": self.start_step,
            "end_step": self.end_step,
            "n": self.n,
            "rmse": self.rmse,
        }


@dataclass
class AgentReport:
    steps: int
    events_sent: int
    segments: list[Segment] = field(default_factory=list)
    swaps: list[dict] = field(default_factory=list)
    trace: list[dict] = field(default_factory=list)  # per-step prediction/observation

    def rmse_over(self, start_step: int, end_step: int) -> float:
        errs = [
            (t["observation"] - t["prediction"]) ** 2
            for t in self.trace
            if start_step <= t["step"] <= end_step
        ]
        if not errs:
            raise ValidationError("no trace rows in window")
        return math.sqrt(sum(errs) / len(errs))

    def as_dict(self) -> dict:
        return {
            "steps": self.steps,
            "events_sent": self.events_sent,
            "segments": [s.as_dict() for s in self.segments],
            "swaps": self.swaps,
        }

    def to_jsonl(self) -> str:
        lines = [canonical_json({"record": "report", **self.as_dict()})]
        for seg in self.segments:
            lines.append(canonical_json({"record": "segment", **seg.as_dict()}))
        return "\n".join(lines) + "\n"


class AgentError(StateError):
    pass


class EdgeAgent:
    def __init__(
        self,
        client: httpx.Client,
        deployment_id: str,
        bundle_bytes: bytes,
        bundle_hash: str | None,
        process: ProcessSpec,
        steps: int,
        poll_interval: int = 10,
        flush_every: int = 1,
        agent_version: str = AGENT_VERSION,
        retry_limit: int = 256,
    ):
        if steps < 0:
            raise ValidationError("steps must be >= 0")
        if poll_interval < 1 or flush_every < 1:
            raise ValidationError("poll_interval and flush_every must be >= 1")
        self.client = client
        self.deployment_id = deployment_id
        self.process = process
        self.steps = steps
        self.poll_interval = poll_interval
        self.flush_every = flush_every
        self.agent_version = agent_version
        self.retry_limit = retry_limit
        self._load_bundle(bundle_bytes, bundle_hash)
        self._pending: list[dict] = []  # undelivered events, serialized at flush
        self._poll_now = False  # set when the service signals a stale deployment

    def _load_bundle(self, bundle_bytes: bytes, bundle_hash: str | None) -> None:
        manifest = verify_bundle(bundle_bytes, expected_hash=bundle_hash)
        if not version_satisfies(self.agent_version, manifest.runtime_range):
            raise UnsupportedError(
                f"agent version {self.agent_version} outside bundle runtime range "
                f"{manifest.runtime_range}",
                {"agent_version": self.agent_version, "range": manifest.runtime_range},
            )
        from .bundles import MODEL_PATH, read_bundle

        _, members = read_bundle(bundle_bytes)
        self.model = deserialize_model(members[MODEL_PATH])
        self.manifest = manifest
        self.bundle_hash = bundle_hash or ""

    def _poll_command(self) -> dict:
        resp = self.client.get(f"/deployments/{self.deployment_id}/command")
        resp.raise_for_status()
        return resp.json()

    def _swap(self, command: dict, step: int, report: AgentReport) -> None:
        """Atomically switch to the new bundle; undelivered events are
        re-addressed to the new deployment (their observations are still
        production truth, the old deployment no longer accepts feedback)."""
        new_dep = command["deployment_id"]
        bundle_hash = command["bundle"]
        resp = self.client.get(f"/blobs/{bundle_hash}")
        resp.raise_for_status()
        old_dep = self.deployment_id
        self._load_bundle(resp.content, bundle_hash)
        self.deployment_id = new_dep
        self._seq = 0
        for event in self._pending:
            self._seq += 1
            event["deployment_id"] = new_dep
            event["seq"] = self._seq
        report.swaps.append({"step": step, "from": old_dep, "to": new_dep})
        if report.segments:
            report.segments[-1].end_step = step - 1
        report.segments.append(
            Segment(deployment_id=new_dep, bundle_hash=bundle_hash, start_step=step)
        )

    def _flush(self, force: bool = False) -> int:
        if not self._pending:
            return 0
        if not force and len(self._pending) < self.flush_every:
            return 0
        batch = list(self._pending)
        body = "\n".join(canonical_json(e) for e in batch) + "\n"
        try:
            resp = self.client.post(
                f"/deployments/{self.deployment_id}/feedback",
                content=body.encode("utf-8"),
                headers={"content-type": "application/x-ndjson"},
            )
        except httpx.TransportError:
            if len(self._pending) > self.retry_limit:
                raise AgentError(
                    f"feedback endpoint unreachable with {len(self._pending)} "
                    "events buffered",
                    {"buffered": len(self._pending)},
                )
            return 0
        if resp.status_code >= 400:
            code = None
            try:
                code = resp.json().get("code")
            except ValueError:
                pass
            if code == "state":
                # deployment went stale mid-stream: poll for the swap command
                self._poll_now = True
                return 0
            raise AgentError(
                f"feedback rejected with status {resp.status_code}: {resp.text}",
                {"status": resp.status_code},
            )
        self._pending.clear()
        return len(batch)

    def run(self) -> AgentReport:
        rng = Xorshift64Star(self.process.seed)
        report = AgentReport(steps=self.steps, events_sent=0)
        report.segments.append(
            Segment(
                deployment_id=self.deployment_id,
                bundle_hash=self.bundle_hash,
                start_step=1,
            )
        )
        self._seq = 0
        for step in range(1, self.steps + 1):
            if self._poll_now or (step - 1) % self.poll_interval == 0:
                self._poll_now = False
                command = self._poll_command()
                if command.get("command") == "swap":
                    self._swap(command, step, report)

            features = {}
            for name, lo, hi in self.process.features:
                features[name] = lo + rng.next_float() * (hi - lo)
            coefs, intercept = self.process.params_at(step)
            truth = intercept
            for coef, (name, _, _) in zip(coefs, self.process.features):
                truth += coef * features[name]
            observation = truth
            if self.process.noise_sigma > 0:
                observation += self.process.noise_sigma * rng.normal()
            prediction = self.model.predict_row(features)

            self._seq += 1
            event = {
                "deployment_id": self.deployment_id,
                "seq": self._seq,
                "features": features,
                "prediction": prediction,
                "observation": observation,
                "ts": _step_ts(step),
            }
            self._pending.append(event)
            report.events_sent += 1
            segment = report.segments[-1]
            segment.n += 1
            segment.end_step = step
            segment.sse += (observation - prediction) ** 2
            report.trace.append(
                {
                    "step": step,
                    "deployment_id": self.deployment_id,
                    "prediction": prediction,
                    "observation": observation,
                }
            )
            self._flush()
        self._flush(force=True)
        if self._pending and self._poll_now:
            # the final batch raced a redeploy; pick up the swap and resend
            command = self._poll_command()
            if command.get("command") == "swap":
                self._swap(command, self.steps + 1, report)
                report.segments.pop()  # no steps ran under the new bundle
                self._flush(force=True)
        if self._pending:
            raise AgentError(
                f"run ended with {len(self._pending)} unsent events",
                {"buffered": len(self._pending)},
            )
        return report


def run_agent(
    client: httpx.Client,
    deployment_id: str,
    process: ProcessSpec,
    steps: int,
    poll_interval: int = 10,
    flush_every: int = 1,
    agent_version: str = AGENT_VERSION,
) -> AgentReport:
    """Fetch the deployment's bundle from the service and run the loop."""
    resp = client.get(f"/deployments/{deployment_id}")
    resp.raise_for_status()
    bundle_hash = resp.json()["bundle"]
    blob = client.get(f"/blobs/{bundle_hash}")
    blob.raise_for_status()
    agent = EdgeAgent(
        client,
        deployment_id,
        blob.content,
        bundle_hash,
        process,
        steps,
        poll_interval=poll_interval,
        flush_every=flush_every,
        agent_version=agent_version,
    )
    return agent.run()
