"""Typed semantic connections between artifacts.

Seven fixed edge kinds. `compatible_with` is symmetric (stored as twin
rows, so either direction answers queries); `base_of`, `tuned_from` and
`newer_recording_of` are kept acyclic by a fail-fast reachability check at
insertion. `newer_recording_of` points from the newer recording to the
older one it supersedes.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from datetime import datetime, timezone

from .db import Database
from .errors import CycleError, NotFoundError, StateError, ValidationError

KINDS = (
    "compatible_with",
    "newer_recording_of",
    "base_of",
    "tuned_from",
    "trained_on",
    "evaluated_on",
    "deployed_as",
)
ACYCLIC_KINDS = ("base_of", "tuned_from", "newer_recording_of")
SYMMETRIC_KINDS = ("compatible_with",)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass(frozen=True)
class LineageEdge:
    from_id: str
    to_id: str
    kind: str
    annotation: str | None
    created_at: str

    def as_dict(self) -> dict:
        return {
            "from": self.from_id,
            "to": self.to_id,
            "kind": self.kind,
            "annotation": self.annotation,
            "created_at": self.created_at,
        }


class LineageGraph:
    def __init__(self, db: Database):
        self.db = db

    def _artifact_exists(self, artifact_id: str) -> bool:
        return self.db.query_one("SELECT 1 FROM artifacts WHERE id = ?", (artifact_id,)) is not None

    def _require_artifact(self, artifact_id: str) -> None:
        if not self._artifact_exists(artifact_id):
            raise NotFoundError(f"no artifact {artifact_id}", {"artifact": artifact_id})

    def add_link(
        self, from_id: str, to_id: str, kind: str, annotation: str | None = None
    ) -> LineageEdge:
        if kind not in KINDS:
            raise ValidationError(f"unknown edge kind {kind!r}", {"kinds": list(KINDS)})
        if from_id == to_id:
            raise ValidationError("self-edges are not allowed", {"artifact": from_id})
        self._require_artifact(from_id)
        self._require_artifact(to_id)
        created = _now()
        with self.db.tx() as conn:
            dup = self.db.query_one(
                "SELECT 1 FROM lineage WHERE from_id = ? AND to_id = ? AND kind = ?",
                (from_id, to_id, kind),
            )
            if dup is not None:
                raise StateError(
                    f"link {from_id} -{kind}-> {to_id} already exists",
                    {"from": from_id, "to": to_id, "kind": kind},
                )
            if kind in ACYCLIC_KINDS:
                path = self._find_path(to_id, from_id, kind)
                if path is not None:
                    cycle = [from_id] + path
                    raise CycleError(
                        "link would create a cycle: " + " -> ".join(cycle),
                        {"path": cycle, "kind": kind},
                    )
            conn.execute(
                "INSERT INTO lineage(from_id, to_id, kind, annotation, created_at) "
                "VALUES(?,?,?,?,?)",
                (from_id, to_id, kind, annotation, created),
            )
            if kind in SYMMETRIC_KINDS:
                conn.execute(
                    "INSERT OR IGNORE INTO lineage(from_id, to_id, kind, annotation, created_at) "
                    "VALUES(?,?,?,?,?)",
                    (to_id, from_id, kind, annotation, created),
                )
        return LineageEdge(from_id, to_id, kind, annotation, created)

    def remove_link(self, from_id: str, to_id: str, kind: str) -> None:
        with self.db.tx() as conn:
            cur = conn.execute(
                "DELETE FROM lineage WHERE from_id = ? AND to_id = ? AND kind = ?",
                (from_id, to_id, kind),
            )
            if cur.rowcount == 0:
                raise NotFoundError(
                    f"no link {from_id} -{kind}-> {to_id}",
                    {"from": from_id, "to": to_id, "kind": kind},
                )
            if kind in SYMMETRIC_KINDS:
                conn.execute(
                    "DELETE FROM lineage WHERE from_id = ? AND to_id = ? AND kind = ?",
                    (to_id, from_id, kind),
                )

    def has_link(self, from_id: str, to_id: str, kind: str) -> bool:
        return (
            self.db.query_one(
                "SELECT 1 FROM lineage WHERE from_id = ? AND to_id = ? AND kind = ?",
                (from_id, to_id, kind),
            )
            is not None
        )

    def _neighbors(self, node: str, kind: str, direction: str) -> list[str]:
        if direction == "out":
            rows = self.db.query(
                "SELECT to_id AS n FROM lineage WHERE from_id = ? AND kind = ?", (node, kind)
            )
        elif direction == "in":
            rows = self.db.query(
                "SELECT from_id AS n FROM lineage WHERE to_id = ? AND kind = ?", (node, kind)
            )
        else:
            rows = self.db.query(
                "SELECT to_id AS n FROM lineage WHERE from_id = ? AND kind = ? "
                "UNION SELECT from_id AS n FROM lineage WHERE to_id = ? AND kind = ?",
                (node, kind, node, kind),
            )
        return [r["n"] for r in rows]

    def connected(
        self,
        artifact_id: str,
        kind: str,
        depth: int | None = None,
        direction: str = "out",
    ) -> list[str]:
        """Artifacts reachable within `depth` hops (None = unbounded), start
        excluded, sorted by id."""
        if kind not in KINDS:
            raise ValidationError(f"unknown edge kind {kind!r}", {"kinds": list(KINDS)})
        if direction not in ("out", "in", "both"):
            raise ValidationError(f"bad direction {direction!r}")
        if depth is not None and depth < 1:
            raise ValidationError("depth must be a positive integer or unbounded")
        self._require_artifact(artifact_id)
        seen = {artifact_id}
        frontier = deque([(artifact_id, 0)])
        found: set[str] = set()
        while frontier:
            node, dist = frontier.popleft()
            if depth is not None and dist >= depth:
                continue
            for nxt in self._neighbors(node, kind, direction):
                if nxt not in seen:
                    seen.add(nxt)
                    found.add(nxt)
                    frontier.append((nxt, dist + 1))
        return sorted(found)

    def multi_connected(
        self, artifact_id: str, kinds_directions: list[tuple[str, str]]
    ) -> list[str]:
        """Unbounded closure over several (kind, direction) edge views at once."""
        self._require_artifact(artifact_id)
        seen = {artifact_id}
        frontier = deque([artifact_id])
        found: set[str] = set()
        while frontier:
            node = frontier.popleft()
            for kind, direction in kinds_directions:
                for nxt in self._neighbors(node, kind, direction):
                    if nxt not in seen:
                        seen.add(nxt)
                        found.add(nxt)
                        frontier.append(nxt)
        return sorted(found)

    def _find_path(self, src: str, dst: str, kind: str) -> list[str] | None:
        """Directed BFS path src -> dst over one kind, or None."""
        if src == dst:
            return [src]
        parents: dict[str, str] = {}
        seen = {src}
        frontier = deque([src])
        while frontier:
            node = frontier.popleft()
            for nxt in self._neighbors(node, kind, "out"):
                if nxt in seen:
                    continue
                parents[nxt] = node
                if nxt == dst:
                    path = [dst]
                    while path[-1] != src:
                        path.append(parents[path[-1]])
                    return list(reversed(path))
                seen.add(nxt)
                frontier.append(nxt)
        return None

    def edges(self, kind: str | None = None) -> list[LineageEdge]:
        if kind is None:
            rows = self.db.query(
                "SELECT * FROM lineage ORDER BY from_id, kind, to_id"
            )
        else:
            rows = self.db.query(
                "SELECT * FROM lineage WHERE kind = ? ORDER BY from_id, kind, to_id", (kind,)
            )
        return [
            LineageEdge(r["from_id"], r["to_id"], r["kind"], r["annotation"], r["created_at"])
            for r in rows
        ]

    def export_lines(self) -> str:
        """One edge per line `from<TAB>kind<TAB>to`, sorted lexicographically."""
        lines = [f"{e.from_id}\t{e.kind}\t{e.to_id}" for e in self.edges()]
        return "\n".join(sorted(lines)) + ("\n" if lines else "")
