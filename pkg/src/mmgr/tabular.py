"""Tabular data: CSV ingestion and the canonical columnar payload codec.

The canonical encoding (documented byte-exactly in docs/formats.md) is what
gets content-addressed, so it must be bit-stable: column-major in header
order, floats as IEEE-754 little-endian doubles, strings length-prefixed
UTF-8.
"""

from __future__ import annotations

import csv
import io
import math
import re
import struct
from dataclasses import dataclass, field

from .errors import CorruptionError, SchemaError, ValidationError

FLOAT = "float"
STRING = "string"

MAGIC = b"MTBL"
FORMAT_VERSION = 1

# Decimal literal: optional sign, digits with optional fraction, optional
# exponent. Deliberately excludes nan/inf and Python's underscore grouping.
_DECIMAL_RE = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$")


@dataclass
class Table:
    """Column-major table; schema is an ordered list of (name, type)."""

    schema: list[tuple[str, str]]
    columns: dict[str, list] = field(repr=False)

    @property
    def row_count(self) -> int:
        if not self.schema:
            return 0
        return len(self.columns[self.schema[0][0]])

    @property
    def column_names(self) -> list[str]:
        return [name for name, _ in self.schema]

    def column_type(self, name: str) -> str | None:
        for col, kind in self.schema:
            if col == name:
                return kind
        return None

    def column(self, name: str) -> list:
        if name not in self.columns:
            raise SchemaError(f"no such column: {name}", {"missing": [name]})
        return self.columns[name]

    def float_column(self, name: str) -> list[float]:
        if self.column_type(name) != FLOAT:
            raise SchemaError(f"column {name} is not numeric", {"missing": [name]})
        return self.columns[name]


def make_table(schema: list[tuple[str, str]], columns: dict[str, list]) -> Table:
    names = [name for name, _ in schema]
    if len(set(names)) != len(names):
        raise SchemaError("duplicate column names", {"columns": names})
    lengths = {len(columns[n]) for n in names} if names else set()
    if len(lengths) > 1:
        raise SchemaError("columns have unequal lengths")
    for name, kind in schema:
        if kind not in (FLOAT, STRING):
            raise ValidationError(f"unknown column type {kind!r}")
        if kind == FLOAT:
            for v in columns[name]:
                if not isinstance(v, float) or not math.isfinite(v):
                    raise ValidationError(f"non-finite or non-float value in column {name}")
    return Table(schema=list(schema), columns={n: list(columns[n]) for n in names})


def _parse_cell(cell: str) -> float | None:
    if not _DECIMAL_RE.match(cell):
        return None
    value = float(cell)
    return value if math.isfinite(value) else None


def parse_csv(data: bytes) -> Table:
    """Parse RFC-4180-style CSV: first row header, UTF-8, '.' decimal separator.

    A column is float iff every cell parses as a finite decimal number;
    otherwise it is a string column. Ragged rows fail with the 1-based data
    row index.
    """
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ValidationError(f"CSV is not valid UTF-8: {exc}")
    reader = csv.reader(io.StringIO(text, newline=""))
    try:
        rows = list(reader)
    except csv.Error as exc:
        raise ValidationError(f"CSV parse failure: {exc}")
    if not rows:
        raise SchemaError("CSV has no header row")
    header = rows[0]
    if any(name == "" for name in header):
        raise SchemaError("empty column name in header", {"columns": header})
    if len(set(header)) != len(header):
        raise SchemaError("duplicate column names in header", {"columns": header})
    width = len(header)
    data_rows = rows[1:]
    for i, row in enumerate(data_rows, start=1):
        if len(row) != width:
            raise SchemaError(
                f"row {i} has {len(row)} fields, expected {width}", {"row": i}
            )

    schema: list[tuple[str, str]] = []
    columns: dict[str, list] = {}
    for j, name in enumerate(header):
        raw = [row[j] for row in data_rows]
        parsed = [_parse_cell(cell) for cell in raw]
        if raw and all(p is not None for p in parsed):
            schema.append((name, FLOAT))
            columns[name] = parsed
        elif not raw:
            # no rows: default to float, matching the all-numeric vacuous case
            schema.append((name, FLOAT))
            columns[name] = []
        else:
            schema.append((name, STRING))
            columns[name] = raw
    return Table(schema=schema, columns=columns)


def encode_table(table: Table) -> bytes:
    """Canonical columnar payload; see docs/formats.md for the byte layout."""
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<H", FORMAT_VERSION))
    out.write(struct.pack("<I", len(table.schema)))
    for name, kind in table.schema:
        raw = name.encode("utf-8")
        out.write(struct.pack("<H", len(raw)))
        out.write(raw)
        out.write(struct.pack("<B", 0 if kind == FLOAT else 1))
    out.write(struct.pack("<Q", table.row_count))
    for name, kind in table.schema:
        values = table.columns[name]
        if kind == FLOAT:
            out.write(struct.pack(f"<{len(values)}d", *values))
        else:
            for v in values:
                raw = v.encode("utf-8")
                out.write(struct.pack("<I", len(raw)))
                out.write(raw)
    return out.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptionError("truncated table payload")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_table(data: bytes) -> Table:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CorruptionError("bad table payload magic")
    (version,) = r.unpack("<H")
    if version != FORMAT_VERSION:
        raise CorruptionError(f"unsupported table payload version {version}")
    (ncols,) = r.unpack("<I")
    schema: list[tuple[str, str]] = []
    for _ in range(ncols):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        (kind,) = r.unpack("<B")
        if kind not in (0, 1):
            raise CorruptionError(f"bad column type byte {kind}")
        schema.append((name, FLOAT if kind == 0 else STRING))
    (nrows,) = r.unpack("<Q")
    columns: dict[str, list] = {}
    for name, kind in schema:
        if kind == FLOAT:
            columns[name] = list(r.unpack(f"<{nrows}d"))
        else:
            values = []
            for _ in range(nrows):
                (vlen,) = r.unpack("<I")
                values.append(r.take(vlen).decode("utf-8"))
            columns[name] = values
    if r.pos != len(data):
        raise CorruptionError("trailing bytes after table payload")
    return Table(schema=schema, columns=columns)


def format_float(value: float) -> str:
    """Shortest decimal that round-trips to the same double."""
    return repr(value)


def table_to_csv(table: Table) -> bytes:
    out = io.StringIO(newline="")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(table.column_names)
    names = table.column_names
    kinds = dict(table.schema)
    for i in range(table.row_count):
        writer.writerow(
            [
                format_float(table.columns[n][i]) if kinds[n] == FLOAT else table.columns[n][i]
                for n in names
            ]
        )
    return out.getvalue().encode("utf-8")
