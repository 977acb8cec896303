"""Pearson correlation and correlation-driven feature selection."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateVarianceError, DomainError, SampleSizeError, SchemaError, ShapeError
from .ingest import RunRecord

# NMC-side quantities unavailable at prediction time
DEFAULT_LEAKAGE = ("nmc_ipc", "nmc_total_time_ns", "nmc_trace_energy_pj", "nmc_edp_js", "edp_speedup")


@dataclass
class FeatureMatrix:
    columns: list[str]
    values: np.ndarray
    target: str | None = None
    row_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.columns):
            raise ShapeError(f"matrix shape {self.values.shape} does not match {len(self.columns)} columns")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("feature matrix contains NaN or infinite cells")
        if len(set(self.columns)) != len(self.columns):
            raise ShapeError("duplicate column names")
        if self.row_ids and len(self.row_ids) != self.values.shape[0]:
            raise ShapeError("row_ids length does not match row count")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.columns.index(name)]
        except ValueError:
            raise SchemaError(f"unknown column {name!r}", [name]) from None

    def select(self, names: Sequence[str]) -> np.ndarray:
        missing = [n for n in names if n not in self.columns]
        if missing:
            raise SchemaError(f"unknown column(s): {', '.join(missing)}", missing)
        return self.values[:, [self.columns.index(n) for n in names]]


def record_value(rec: RunRecord, name: str) -> float:
    """Look up a named feature of an annotated record.

    Besides derived-feature names, ``threads``, ``dataset_param`` and
    ``dataset_level`` come from the run spec and ``event:<name>`` reads a raw
    host event.
    """
    if name in ("threads", "dataset_param", "dataset_level"):
        return float(getattr(rec.spec, name))
    if name.startswith("event:"):
        ev = name[len("event:"):]
        if ev not in rec.host.events:
            raise SchemaError(f"{rec.spec.run_id}: host event {ev!r} missing", [ev])
        return rec.host.events[ev]
    if rec.derived is None:
        raise SchemaError(f"{rec.spec.run_id}: record has no derived features", [name])
    if not hasattr(rec.derived, name):
        raise SchemaError(f"unknown feature {name!r}", [name])
    value = getattr(rec.derived, name)
    if value is None:
        raise SchemaError(f"{rec.spec.run_id}: feature {name!r} unavailable", [name])
    return value


def build_matrix(records: Sequence[RunRecord], columns: Sequence[str],
                 target: str | None = None) -> FeatureMatrix:
    rows = [[record_value(r, c) for c in columns] for r in records]
    values = np.array(rows, dtype=float).reshape(len(records), len(columns))
    return FeatureMatrix(list(columns), values, target, [r.spec.run_id for r in records])


def pearson(x, y) -> float:
    """Sample Pearson correlation coefficient, clipped to [-1, 1]."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ShapeError(f"shape mismatch: {x.shape} vs {y.shape}")
    if x.size < 2:
        raise SampleSizeError("pearson needs at least 2 observations")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    sx = math.sqrt(sxx)
    sy = math.sqrt(syy)
    # relative test so tiny rounding residue on constant data counts as constant
    if sx <= 1e-14 * max(1.0, float(np.abs(x).max())) * math.sqrt(x.size):
        raise DegenerateVarianceError("x is constant")
    if sy <= 1e-14 * max(1.0, float(np.abs(y).max())) * math.sqrt(y.size):
        raise DegenerateVarianceError("y is constant")
    # one square root of the product rounds better than a product of roots
    denom = math.sqrt(sxx * syy)
    if not math.isfinite(denom) or denom == 0.0:
        denom = sx * sy
    r = float(dx @ dy) / denom
    return max(-1.0, min(1.0, r))


@dataclass
class CorrelationMatrix:
    names: list[str]
    r: np.ndarray
    undefined: list[str] = field(default_factory=list)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SchemaError(f"unknown feature {name!r}", [name]) from None

    def get(self, a: str, b: str) -> float:
        return float(self.r[self.index(a), self.index(b)])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["feature"] + self.names)
        for name, row in zip(self.names, self.r):
            w.writerow([name] + [repr(float(v)) for v in row])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"names": list(self.names), "r": [[float(v) for v in row] for row in self.r],
                "undefined": list(self.undefined)}


def correlation_matrix(m: FeatureMatrix) -> CorrelationMatrix:
    """Pairwise Pearson over all columns.

    Constant columns cannot be correlated; their row and column are filled
    with 0 (diagonal included) and their names listed in ``undefined``.
    """
    if m.n_rows < 2:
        raise SampleSizeError(f"correlation needs at least 2 rows, got {m.n_rows}")
    p = len(m.columns)
    r = np.zeros((p, p))
    undefined = []
    for i in range(p):
        col = m.values[:, i]
        try:
            pearson(col, col)
        except DegenerateVarianceError:
            undefined.append(m.columns[i])
    bad = {m.columns.index(n) for n in undefined}
    for i in range(p):
        if i in bad:
            continue
        r[i, i] = 1.0
        for j in range(i + 1, p):
            if j in bad:
                continue
            r[i, j] = r[j, i] = pearson(m.values[:, i], m.values[:, j])
    return CorrelationMatrix(list(m.columns), r, undefined)


def select_features(cm: CorrelationMatrix, target: str, threshold: float = 0.3,
                    must_keep: Iterable[str] = (), exclude: Iterable[str] = DEFAULT_LEAKAGE,
                    candidates: Iterable[str] | None = None) -> list[str]:
    """Features whose |r| with ``target`` reaches ``threshold``.

    ``must_keep`` names are always returned. The target and ``exclude`` names
    are never returned unless forced through ``must_keep``. Ordering is by
    descending |r|, ties broken by name.
    """
    if target not in cm.names:
        raise SchemaError(f"target {target!r} not in correlation matrix", [target])
    if not 0 <= threshold:
        raise DomainError("threshold must be >= 0")
    must_keep = list(dict.fromkeys(must_keep))
    unknown = [n for n in must_keep if n not in cm.names]
    if unknown:
        raise SchemaError(f"must_keep name(s) not in correlation matrix: {', '.join(unknown)}", unknown)
    banned = set(exclude) | {target}
    pool = cm.names if candidates is None else [n for n in cm.names if n in set(candidates)]
    t = cm.index(target)
    strength = {n: abs(float(cm.r[cm.index(n), t])) for n in cm.names}
    chosen = {n for n in pool if n not in banned and strength[n] >= threshold}
    chosen.update(must_keep)
    return sorted(chosen, key=lambda n: (-strength[n], n))
