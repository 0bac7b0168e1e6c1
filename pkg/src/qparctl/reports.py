"""Run artifacts and their on-disk layout.

An artifact directory holds

``summary.json``
    Scalar diagnostics, the scenario snapshot, command, input hash, status
    and error records.  Keys are sorted, so identical inputs give identical
    bytes.
``timing.json``
    Wall-clock seconds (kept apart so the summary stays byte-stable).
``<table>.csv``
    One file per table with a fixed header row.  Floats are written with
    ``repr`` so they re-parse to the same doubles.

Tables produced by the commands: ``time_series`` (t, M, E, l2, linf_bound),
``slab`` (x, t, y, u at the configured stride) and command-specific tables
such as ``probe`` or ``search``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SUMMARY_FILE = "summary.json"
TIMING_FILE = "timing.json"


@dataclass
class Table:
    columns: list
    rows: list = field(default_factory=list)

    @classmethod
    def from_columns(cls, **cols):
        names = list(cols)
        arrays = [np.asarray(v).ravel() for v in cols.values()]
        n = arrays[0].size if arrays else 0
        if any(a.size != n for a in arrays):
            raise ValueError("table columns differ in length")
        return cls(names, [list(row) for row in zip(*arrays)])


@dataclass
class RunArtifact:
    command: str
    scenario: dict
    input_hash: str
    status: str = "ok"
    summary: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    errors: list = field(default_factory=list)
    wall_clock: float = 0.0

    def record_error(self, exc: BaseException, stage=""):
        rec = {"type": type(exc).__name__, "message": str(exc), "stage": stage}
        for attr in ("line", "field", "residual", "time_index", "iterations", "x", "t", "value"):
            val = getattr(exc, attr, None)
            if val is not None:
                rec[attr] = _jsonable(val)
        self.errors.append(rec)

    def summary_document(self) -> dict:
        return {
            "command": self.command,
            "status": self.status,
            "input_hash": self.input_hash,
            "scenario": self.scenario,
            "results": self.summary,
            "errors": self.errors,
            "tables": sorted(self.tables),
        }


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    return value


def _cell(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    if isinstance(value, (np.bool_, bool)):
        return "true" if value else "false"
    return "" if value is None else str(value)


def write_table(table: Table, path) -> Path:
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(table.columns)
            for row in table.rows:
                writer.writerow([_cell(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def read_table(path) -> Table:
    """Read a CSV written by :func:`write_table`; numeric cells become floats."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        columns = next(reader)
        rows = []
        for row in reader:
            parsed = []
            for cell in row:
                try:
                    parsed.append(float(cell))
                except ValueError:
                    parsed.append(cell)
            rows.append(parsed)
    return Table(columns, rows)


def emit_report(artifact: RunArtifact, out_dir, formats=("csv", "summary")) -> list:
    """Write the artifact files; returns the written paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    written = []
    if "summary" in formats:
        path = out / SUMMARY_FILE
        text = json.dumps(_jsonable(artifact.summary_document()), sort_keys=True, indent=2)
        path.write_text(text + "\n")
        written.append(path)
        tpath = out / TIMING_FILE
        tpath.write_text(json.dumps({"wall_clock_seconds": artifact.wall_clock}) + "\n")
        written.append(tpath)
    if "csv" in formats:
        for name in sorted(artifact.tables):
            written.append(write_table(artifact.tables[name], out / f"{name}.csv"))
    return written


def load_summary(out_dir) -> dict:
    return json.loads((Path(out_dir) / SUMMARY_FILE).read_text())
