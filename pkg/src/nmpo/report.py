"""Report documents: tables with CSV and JSON twins.

Document names and column orders are part of the interface:

=================  ==========================================================
name               columns
=================  ==========================================================
roofline           app, run, dataset_level, threads, ai, gflops, region
energy_time        app, run, dataset_level, threads, host_energy_j,
                   host_time_s, host_edp_js, nmc_energy_j, nmc_time_s,
                   nmc_edp_js
edp_speedup        app, run, dataset_level, threads, edp_speedup, label
profiler_overhead  app, dataset, perf_s, pisa_s, ratio, in_band, outlier
predictions        app, run, actual, predicted, decision, predicted_ipc,
                   actual_ipc, p_yes, p_maybe, p_no, roofline_region
confusion          actual, yes, maybe, no
accuracy           scope, app, n, accuracy
loao_predictions   like predictions, from leave-one-app-out evaluation
loao_confusion     like confusion
loao_accuracy      like accuracy
correlation        feature, <every feature>
=================  ==========================================================
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional, Sequence

from .errors import ConfigError, DataError, ParseError
from .evaluation import LABELS, ORIENTATION, ConfusionMatrix, LoaoSummary, confusion
from .forest import canonical_json
from .ingest import RunRecord
from .metrics import MachineRoofline, classify_intensity
from .pipeline import DECISION_NOTES, ModelBundle, predict_record
from .stats import CorrelationMatrix

OVERHEAD_BAND = (1e2, 1e4)
OVERHEAD_CHECK = (36.0, 2300.0)

CONFUSION_COLUMNS = ["actual", *LABELS]
ACCURACY_COLUMNS = ["scope", "app", "n", "accuracy"]
PREDICTION_COLUMNS = ["app", "run", "actual", "predicted", "decision", "predicted_ipc", "actual_ipc",
                      *(f"p_{l}" for l in LABELS), "roofline_region"]


@dataclass
class ReportDoc:
    name: str
    columns: list[str]
    rows: list[dict]
    meta: dict = field(default_factory=dict)

    def column(self, name: str) -> list:
        return [r[name] for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([_cell(row[c]) for c in self.columns])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"name": self.name, "columns": list(self.columns), "meta": self.meta,
                "rows": [{c: row[c] for c in self.columns} for row in self.rows]}

    def to_json(self) -> str:
        return canonical_json(self.to_dict()) + "\n"


def _cell(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _base(rec: RunRecord) -> dict:
    return {"app": rec.spec.app, "run": rec.spec.run_id,
            "dataset_level": rec.spec.dataset_level, "threads": rec.spec.threads}


def roofline_doc(records: Sequence[RunRecord], machine: MachineRoofline) -> ReportDoc:
    rows = []
    for rec in records:
        d = rec.derived
        region = classify_intensity(d.host_flop_per_byte, machine).value if d.host_flop_per_byte > 0 else None
        rows.append({**_base(rec), "ai": d.host_flop_per_byte, "gflops": d.host_gflops_per_s,
                     "region": region})
    meta = {"machine": machine.to_dict(), "ridge_dram": machine.ridge_dram, "ridge_l3": machine.ridge_l3}
    return ReportDoc("roofline", ["app", "run", "dataset_level", "threads", "ai", "gflops", "region"],
                     rows, meta)


def energy_time_doc(records: Sequence[RunRecord]) -> ReportDoc:
    rows = []
    for rec in records:
        d = rec.derived
        row = {**_base(rec), "host_energy_j": d.host_total_energy_j, "host_time_s": rec.host.wall_time_s,
               "host_edp_js": d.host_edp_js, "nmc_energy_j": None, "nmc_time_s": None, "nmc_edp_js": None}
        if d.nmc_edp_js is not None:
            row.update(nmc_energy_j=d.nmc_trace_energy_pj * 1e-12, nmc_time_s=d.nmc_total_time_ns * 1e-9,
                       nmc_edp_js=d.nmc_edp_js)
        rows.append(row)
    cols = ["app", "run", "dataset_level", "threads", "host_energy_j", "host_time_s", "host_edp_js",
            "nmc_energy_j", "nmc_time_s", "nmc_edp_js"]
    return ReportDoc("energy_time", cols, rows)


def edp_speedup_doc(records: Sequence[RunRecord], convention: str = "lower") -> ReportDoc:
    rows = [{**_base(r), "edp_speedup": r.derived.edp_speedup, "label": str(r.label)}
            for r in records if r.derived.edp_speedup is not None]
    return ReportDoc("edp_speedup", ["app", "run", "dataset_level", "threads", "edp_speedup", "label"],
                     rows, {"label_convention": convention, "thresholds": {"yes": "> 2", "maybe": "(1, 2]",
                                                                          "no": "<= 1"}})


# ---------------------------------------------------------------------------
# profiler overhead


@dataclass(frozen=True)
class TimingPair:
    app: str
    dataset: str
    perf_s: float
    pisa_s: float

    @property
    def ratio(self) -> float:
        return self.pisa_s / self.perf_s


def parse_timings(text: str, source: str = "timings") -> list[TimingPair]:
    """CSV with header ``app,dataset,perf_s,pisa_s``."""
    reader = csv.DictReader(io.StringIO(text))
    need = ["app", "dataset", "perf_s", "pisa_s"]
    if reader.fieldnames is None or any(c not in reader.fieldnames for c in need):
        raise ParseError(f"header must contain {', '.join(need)}", 1, source)
    out = []
    for i, row in enumerate(reader, start=2):
        try:
            perf, pisa = float(row["perf_s"]), float(row["pisa_s"])
        except (TypeError, ValueError):
            raise ParseError("perf_s and pisa_s must be numbers", i, source) from None
        if not (perf > 0 and pisa > 0 and math.isfinite(perf) and math.isfinite(pisa)):
            raise ParseError("timings must be finite and > 0", i, source)
        out.append(TimingPair(row["app"], row["dataset"], perf, pisa))
    if not out:
        raise ParseError("no timing rows", None, source)
    return out


def load_timings(path=None) -> list[TimingPair]:
    """Timings from ``path``, or the bundled perf-vs-PISA table."""
    if path is None:
        text = resources.files("nmpo").joinpath("data/perf_vs_pisa.csv").read_text()
        return parse_timings(text, "perf_vs_pisa.csv")
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read timings {path}: {exc.strerror or exc}") from None
    return parse_timings(text, str(path))


def profiler_overhead_doc(pairs: Sequence[TimingPair], band=OVERHEAD_BAND) -> ReportDoc:
    """Slowdown of the instrumentation-based characterization relative to perf.

    ``in_band`` tests the two-to-three orders of magnitude claim; rows below
    the band are flagged as outliers rather than rejected.
    """
    lo, hi = band
    rows = []
    for p in pairs:
        r = p.ratio
        rows.append({"app": p.app, "dataset": p.dataset, "perf_s": p.perf_s, "pisa_s": p.pisa_s,
                     "ratio": r, "in_band": lo <= r <= hi, "outlier": not lo <= r <= hi})
    ratios = [r["ratio"] for r in rows]
    low = min(rows, key=lambda r: r["ratio"])
    meta = {"band": [lo, hi], "min_ratio": low["ratio"], "min_app": low["app"],
            "max_ratio": max(ratios), "outliers": [r["app"] for r in rows if r["outlier"]]}
    return ReportDoc("profiler_overhead", ["app", "dataset", "perf_s", "pisa_s", "ratio", "in_band", "outlier"],
                     rows, meta)


# ---------------------------------------------------------------------------
# classification results


def confusion_doc(cm: ConfusionMatrix, name: str = "confusion") -> ReportDoc:
    rows = [{"actual": l, **dict(zip(cm.labels, cm.row(l)))} for l in cm.labels]
    return ReportDoc(name, ["actual", *cm.labels], rows,
                     {"orientation": ORIENTATION, "total": cm.total, "accuracy": cm.accuracy})


def accuracy_doc(apps: Sequence[str], actual: Sequence[str], predicted: Sequence[str],
                 name: str = "accuracy") -> ReportDoc:
    """Per-application accuracy followed by both aggregations (mean over
    applications and pooled over rows)."""
    per_app: dict[str, list[bool]] = {}
    for app, a, p in zip(apps, actual, predicted):
        per_app.setdefault(app, []).append(a == p)
    rows = [{"scope": "app", "app": app, "n": len(hits), "accuracy": sum(hits) / len(hits)}
            for app, hits in sorted(per_app.items())]
    mean = sum(r["accuracy"] for r in rows) / len(rows)
    hits = [a == p for a, p in zip(actual, predicted)]
    rows.append({"scope": "mean_over_apps", "app": None, "n": len(rows), "accuracy": mean})
    rows.append({"scope": "pooled_rows", "app": None, "n": len(hits), "accuracy": sum(hits) / len(hits)})
    return ReportDoc(name, ACCURACY_COLUMNS, rows, {"mean_over_apps": mean,
                                                    "pooled_rows": sum(hits) / len(hits)})


def _prediction_rows(bundle: ModelBundle, records: Sequence[RunRecord]) -> list[dict]:
    rows = []
    for rec in records:
        p = predict_record(bundle, rec)
        rows.append({
            "app": rec.spec.app, "run": rec.spec.run_id,
            "actual": None if rec.label is None else str(rec.label),
            "predicted": p.label, "decision": p.decision, "predicted_ipc": p.predicted_ipc,
            "actual_ipc": rec.derived.nmc_ipc,
            **{f"p_{l}": p.probabilities[l] for l in LABELS},
            "roofline_region": p.roofline_region,
        })
    return rows


def classification_docs(bundle: ModelBundle, records: Sequence[RunRecord]) -> list[ReportDoc]:
    """Bundle predictions on held-out runs.

    Held-out means the runs with role ``test``; if the corpus has none, every
    labeled run is scored and the documents say so.
    """
    test = [r for r in records if r.spec.role == "test"]
    scope = "test"
    if not test:
        test, scope = list(records), "all"
    rows = _prediction_rows(bundle, test)
    meta = {"scope": scope, "model_hash": bundle.digest, "decisions": DECISION_NOTES}
    docs = [ReportDoc("predictions", PREDICTION_COLUMNS, rows, meta)]
    scored = [r for r in rows if r["actual"] is not None]
    if scored:
        cm = confusion([r["predicted"] for r in scored], [r["actual"] for r in scored])
        c = confusion_doc(cm)
        c.meta["scope"] = scope
        a = accuracy_doc([r["app"] for r in scored], [r["actual"] for r in scored],
                         [r["predicted"] for r in scored])
        a.meta["scope"] = scope
        docs += [c, a]
    return docs


def loao_docs(summary: LoaoSummary) -> list[ReportDoc]:
    rows = [{**row, "decision": DECISION_NOTES[row["predicted"]]} for row in summary.rows()]
    cols = [c for c in PREDICTION_COLUMNS if c != "roofline_region"]
    apps = [r["app"] for r in rows]
    return [
        ReportDoc("loao_predictions", cols, rows, {"protocol": "leave-one-application-out"}),
        confusion_doc(summary.confusion, "loao_confusion"),
        accuracy_doc(apps, [r["actual"] for r in rows], [r["predicted"] for r in rows], "loao_accuracy"),
    ]


def correlation_doc(cm: CorrelationMatrix) -> ReportDoc:
    rows = [{"feature": a, **{b: float(cm.r[i, j]) for j, b in enumerate(cm.names)}}
            for i, a in enumerate(cm.names)]
    return ReportDoc("correlation", ["feature", *cm.names], rows, {"undefined": list(cm.undefined)})


# ---------------------------------------------------------------------------


@dataclass
class ReportOptions:
    machine: MachineRoofline = field(default_factory=MachineRoofline.default)
    label_convention: str = "lower"
    timings: Optional[Sequence[TimingPair]] = None
    evaluation: Optional[LoaoSummary] = None
    correlation: Optional[CorrelationMatrix] = None


def report(records: Sequence[RunRecord], bundle: ModelBundle | None = None,
           options: ReportOptions | None = None) -> dict[str, ReportDoc]:
    """Every report document that the inputs support, keyed by name."""
    opts = options or ReportOptions()
    records = [r for r in records if r.derived is not None]
    if not records:
        raise ConfigError("report needs at least one record with derived features")
    docs = [roofline_doc(records, opts.machine), energy_time_doc(records),
            edp_speedup_doc(records, opts.label_convention)]
    if opts.timings:
        docs.append(profiler_overhead_doc(opts.timings))
    if bundle is not None:
        docs += classification_docs(bundle, records)
    if opts.evaluation is not None:
        docs += loao_docs(opts.evaluation)
    if opts.correlation is not None:
        docs.append(correlation_doc(opts.correlation))
    return {d.name: d for d in docs}


def write_report(docs: dict[str, ReportDoc], out_dir, figures: bool = True) -> list[Path]:
    """Write ``<name>.csv`` and ``<name>.json`` for every document, plus a
    ``<name>.png`` where a figure exists. Returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, doc in docs.items():
        for suffix, text in ((".csv", doc.to_csv()), (".json", doc.to_json())):
            path = out / f"{name}{suffix}"
            path.write_text(text)
            written.append(path)
    if figures:
        from .plotting import render_figures
        written += render_figures(docs, out)
    index = out / "index.json"
    index.write_text(json.dumps(sorted(p.name for p in written), indent=2) + "\n")
    return written + [index]
