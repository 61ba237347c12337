"""Result tables and their CSV / JSON files.

A CSV table is written next to a ``<name>.meta.json`` sidecar holding the
column types and the metadata needed to reproduce it.  A JSON table is a
single document.  Floats are written with 17 significant digits so that a
read-back table compares equal to the one that was written.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

__all__ = ["ResultTable", "write_table", "read_table", "csv_text", "format_value", "sidecar_path"]

_TYPES = {"int": int, "float": float, "str": str}


def format_value(value) -> str:
    if isinstance(value, bool):
        raise TypeError("boolean cells are not supported")
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def _type_name(value) -> str:
    if isinstance(value, bool):
        raise TypeError("boolean cells are not supported")
    if isinstance(value, int):
        return "int"
    if isinstance(value, float):
        return "float"
    if isinstance(value, str):
        return "str"
    raise TypeError(f"unsupported cell type {type(value).__name__}")


@dataclass
class ResultTable:
    schema: list[str]
    rows: list[dict]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.schema = list(self.schema)
        for i, row in enumerate(self.rows):
            if list(row) != self.schema:
                raise ValueError(f"row {i} has columns {list(row)}, expected {self.schema}")

    @classmethod
    def from_rows(cls, rows: list[dict], metadata: dict | None = None) -> "ResultTable":
        if not rows:
            raise ValueError("cannot infer a schema from zero rows")
        return cls(list(rows[0]), [dict(r) for r in rows], dict(metadata or {}))

    def column_types(self) -> dict[str, str]:
        types = {}
        for col in self.schema:
            names = {_type_name(r[col]) for r in self.rows}
            if names == {"int", "float"}:
                names = {"float"}
            types[col] = names.pop() if len(names) == 1 else "str"
        return types

    def column(self, name: str) -> list:
        return [r[name] for r in self.rows]

    def __len__(self):
        return len(self.rows)

    def __eq__(self, other):
        if not isinstance(other, ResultTable):
            return NotImplemented
        return self.schema == other.schema and self.metadata == other.metadata and _same_rows(self.rows, other.rows)


def _same_rows(a, b) -> bool:
    if len(a) != len(b):
        return False
    for ra, rb in zip(a, b):
        for k in ra:
            x, y = ra[k], rb[k]
            if isinstance(x, float) and isinstance(y, float) and math.isnan(x) and math.isnan(y):
                continue
            if x != y:
                return False
    return True


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=True) + "\n"


def _write(path: Path, text: str) -> None:
    # newline="" keeps carriage returns inside quoted cells intact.
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def csv_text(table: ResultTable) -> str:
    """The table as RFC 4180 CSV (CRLF line ends, minimal quoting)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(table.schema)
    for row in table.rows:
        cells = [format_value(row[c]) for c in table.schema]
        if any("\0" in cell for cell in cells):
            raise ValueError("CSV cells cannot contain NUL characters")
        writer.writerow(cells)
    return buf.getvalue()


def write_table(table: ResultTable, path, fmt: str = "csv") -> list[Path]:
    """Write ``table`` and return the paths written."""
    path = Path(path)
    types = table.column_types()
    if fmt == "csv":
        text = csv_text(table)
        meta = {"schema": table.schema, "column_types": types, "metadata": table.metadata}
        _write(path, text)
        side = sidecar_path(path)
        _write(side, _dumps(meta))
        return [path, side]
    if fmt == "json":
        doc = {"schema": table.schema, "column_types": types, "metadata": table.metadata, "rows": table.rows}
        _write(path, _dumps(doc))
        return [path]
    raise ValueError(f"unknown format {fmt!r}; use csv or json")


def _coerce(text: str, kind: str):
    if kind == "float":
        return float(text)
    return _TYPES[kind](text)


def read_table(path, fmt: str | None = None) -> ResultTable:
    path = Path(path)
    fmt = fmt or ("json" if path.suffix == ".json" else "csv")
    if fmt == "json":
        doc = json.loads(path.read_text(encoding="utf-8"))
        types = doc["column_types"]
        rows = [{c: _coerce(format_value(r[c]), types[c]) for c in doc["schema"]} for r in doc["rows"]]
        return ResultTable(doc["schema"], rows, doc["metadata"])
    meta = json.loads(sidecar_path(path).read_text(encoding="utf-8"))
    types = meta["column_types"]
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != meta["schema"]:
            raise ValueError(f"CSV header {header} does not match sidecar schema {meta['schema']}")
        rows = [{c: _coerce(v, types[c]) for c, v in zip(header, line)} for line in reader]
    return ResultTable(header, rows, meta["metadata"])
