"""Reports, check records and deterministic serialization.

Floats are written with 17 significant digits so that reports round-trip
exactly and diff cleanly; non-finite floats become the strings ``"nan"``,
``"inf"`` and ``"-inf"``.
"""
from __future__ import annotations

import csv
import json
import io
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CheckRecord",
    "Report",
    "format_float",
    "dumps",
    "write_csv",
    "aggregate_status",
    "exit_code",
    "VOLATILE_FIELDS",
    "STATUSES",
]

STATUSES = ("pass", "fail", "inconclusive", "info")
VOLATILE_FIELDS = ("timestamp", "runtime_seconds")


def format_float(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return f"{x:.17g}"


def _normalize(obj):
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return [_normalize(v) for v in obj.tolist()]
    if isinstance(obj, (list, tuple)):
        return [_normalize(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): _normalize(v) for k, v in obj.items()}
    return obj


def _emit(obj, indent, level, out):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        out.write("null")
    elif isinstance(obj, bool):
        out.write("true" if obj else "false")
    elif isinstance(obj, int):
        out.write(str(obj))
    elif isinstance(obj, float):
        out.write(format_float(obj))
    elif isinstance(obj, str):

        out.write(json.dumps(obj))
    elif isinstance(obj, list):
        if not obj:
            out.write("[]")
            return
        if all(isinstance(v, (int, float, bool)) or v is None for v in obj):
            out.write("[")
            for i, v in enumerate(obj):
                if i:
                    out.write(", ")
                _emit(v, indent, level + 1, out)
            out.write("]")
            return
        out.write("[\n")
        for i, v in enumerate(obj):
            out.write(pad)
            _emit(v, indent, level + 1, out)
            out.write(",\n" if i < len(obj) - 1 else "\n")
        out.write(end + "]")
    elif isinstance(obj, dict):
        if not obj:
            out.write("{}")
            return
        out.write("{\n")
        items = list(obj.items())
        for i, (k, v) in enumerate(items):
            out.write(pad + json.dumps(k) + ": ")
            _emit(v, indent, level + 1, out)
            out.write(",\n" if i < len(items) - 1 else "\n")
        out.write(end + "}")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    """JSON text with 17-significant-digit floats and insertion-ordered keys."""
    buf = io.StringIO()
    _emit(_normalize(obj), indent, 0, buf)
    buf.write("\n")
    return buf.getvalue()


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return format_float(v).strip('"')
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return "" if v is None else str(v)


def write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(v) for v in row])


@dataclass
class CheckRecord:
    """One verified statement: measured ``value`` against ``bound``."""

    name: str
    claim: str
    value: object
    bound: object
    status: str
    detail: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"unknown check status {self.status!r}")

    def as_dict(self):
        return {"name": self.name, "claim": self.claim, "value": self.value, "bound": self.bound,
                "status": self.status, "detail": self.detail}


def aggregate_status(statuses) -> str:
    statuses = list(statuses)
    if "fail" in statuses:
        return "fail"
    if "inconclusive" in statuses:
        return "inconclusive"
    return "pass"


def exit_code(status: str) -> int:
    return {"pass": 0, "fail": 1, "inconclusive": 2}[status]


@dataclass
class Report:
    scenario_id: str
    kind: str
    claim: str
    checks: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    figures: list = field(default_factory=list)
    runtime_seconds: float = 0.0
    timestamp: str = ""

    def add(self, name, claim, value, bound, status, **detail) -> CheckRecord:
        rec = CheckRecord(name, claim, value, bound, status, detail)
        self.checks.append(rec)
        return rec

    def check(self, name) -> CheckRecord:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def checks_named(self, prefix):
        return [c for c in self.checks if c.name.startswith(prefix)]

    @property
    def status(self) -> str:
        return aggregate_status(c.status for c in self.checks)

    def as_dict(self) -> dict:
        return {
            "scenario": self.scenario_id,
            "kind": self.kind,
            "claim": self.claim,
            "status": self.status,
            "checks": [c.as_dict() for c in self.checks],
            "provenance": self.provenance,
            "tables": {k: {"columns": list(v["columns"]), "rows": [list(r) for r in v["rows"]]}
                       for k, v in self.tables.items()},
            "figures": list(self.figures),
            "timestamp": self.timestamp,
            "runtime_seconds": self.runtime_seconds,
        }

    def to_json(self) -> str:
        return dumps(self.as_dict())

    def summary_lines(self):
        for c in self.checks:
            yield f"{self.scenario_id:<22} {c.status.upper():<12} {c.name}: {_short(c.value)} (bound {_short(c.bound)})"


def _short(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_short(x) for x in v) + "]"
    return str(v)
