"""Experiment reports: named inequality checks plus tabular rows.

Every check is stored as ``lhs <= rhs`` with ``margin = rhs - lhs``. A check
whose hypothesis does not hold keeps its numbers but carries the status
``hypothesis-not-met`` and never counts as a failure.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["CheckRecord", "ExperimentReport", "PASS", "FAIL", "NOT_MET", "INFO", "to_jsonable"]

PASS = "pass"
FAIL = "fail"
NOT_MET = "hypothesis-not-met"
INFO = "info"


def to_jsonable(value):
    """Convert numpy scalars/arrays and non-finite floats into JSON-safe values."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return value


@dataclass
class CheckRecord:
    name: str
    lhs: float
    rhs: float
    margin: float
    status: str
    details: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status != FAIL

    def to_dict(self) -> dict:
        return to_jsonable({"name": self.name, "lhs": self.lhs, "rhs": self.rhs, "margin": self.margin,
                            "status": self.status, **({"details": self.details} if self.details else {})})


@dataclass
class ExperimentReport:
    """Checks and rows produced by one experiment."""

    name: str
    params: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def check_le(self, name, lhs, rhs, tol=0.0, hypothesis=True, **details) -> CheckRecord:
        """Record ``lhs <= rhs + tol``."""
        lhs, rhs = float(lhs), float(rhs)
        margin = rhs - lhs
        if not hypothesis:
            status = NOT_MET
        elif math.isnan(margin):
            status = FAIL
        else:
            status = PASS if margin >= -tol else FAIL
        rec = CheckRecord(name, lhs, rhs, margin, status, dict(details, tol=tol) if tol else dict(details))
        self.checks.append(rec)
        return rec

    def info(self, name, value, **details) -> CheckRecord:
        rec = CheckRecord(name, float(value), float("nan"), float("nan"), INFO, dict(details))
        self.checks.append(rec)
        return rec

    def extend(self, other: "ExperimentReport", prefix: str = "") -> None:
        for c in other.checks:
            self.checks.append(CheckRecord(prefix + c.name, c.lhs, c.rhs, c.margin, c.status, c.details))
        self.rows.extend(other.rows)
        self.notes.extend(other.notes)

    @property
    def passed(self) -> bool:
        return all(c.ok for c in self.checks)

    @property
    def failures(self) -> list:
        return [c for c in self.checks if c.status == FAIL]

    def statuses(self) -> dict:
        out = {}
        for c in self.checks:
            out[c.status] = out.get(c.status, 0) + 1
        return out

    def get(self, name: str) -> CheckRecord:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return to_jsonable({
            "name": self.name,
            "params": self.params,
            "passed": self.passed,
            "summary": self.statuses(),
            "checks": [c.to_dict() for c in self.checks],
            "rows": self.rows,
            "notes": self.notes,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        """Rows as CSV; falls back to one row per check when there are no rows."""
        rows = self.rows or [
            {"name": c.name, "lhs": c.lhs, "rhs": c.rhs, "margin": c.margin, "pass": c.status} for c in self.checks
        ]
        columns = []
        for r in rows:
            for key in r:
                if key not in columns:
                    columns.append(key)
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: _fmt(v) for k, v in to_jsonable(r).items()})
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return ";".join(_fmt(x) for x in v)
    return v
