"""Parsers for host profiles, NMC simulator statistics and run manifests.

Host profile format (one event per line, ``;`` separated by default)::

    # run_count=5
    1.234e9;;cache-misses;...
    12.5;Joules;power/energy-pkg/;...
    <not supported>;;power/energy-ram/;

Columns are ``value``, ``unit``, ``event`` and anything after that is ignored,
which matches ``perf stat -x``. Lines starting with ``#`` are comments; a
``run_count=N`` token inside a comment records how many profiling runs were
averaged into the file.

Simulator statistics are whitespace separated ``key value`` lines as written
by Ramulator, plus the two DRAMPower summary lines (``Average Power`` and
``Total Trace Energy``), which may live in a companion stream.
"""

from __future__ import annotations

import json
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Mapping, Optional, Sequence

import jsonschema

from .errors import (
    AmbiguityError,
    ConsistencyError,
    EmptyInputError,
    IngestIOError,
    JoinError,
    ManifestError,
    MissingStatisticError,
    ParseError,
)

if TYPE_CHECKING:
    from .metrics import DerivedFeatures, OffloadLabel

MISSING_MARKERS = ("<not supported>", "<not counted>")

ENERGY_PKG = "power/energy-pkg/"
ENERGY_PSYS = "power/energy-psys/"
ENERGY_RAM = "power/energy-ram/"
DATA_READS = "uncore_imc/data_reads/"
DATA_WRITES = "uncore_imc/data_writes/"
FP_ARITH_PREFIX = "fp_arith_inst_retired"
TIME_EVENT = "duration_time"

# unit -> (canonical unit, multiplier)
_UNIT_TABLE = {
    "joules": ("Joules", 1.0),
    "j": ("Joules", 1.0),
    "mj": ("Joules", 1e-3),
    "uj": ("Joules", 1e-6),
    "mib": ("MiB", 1.0),
    "kib": ("MiB", 1.0 / 1024),
    "gib": ("MiB", 1024.0),
    "ns": ("s", 1e-9),
    "us": ("s", 1e-6),
    "ms": ("s", 1e-3),
    "s": ("s", 1.0),
    "sec": ("s", 1.0),
    "seconds": ("s", 1.0),
}


def normalize_unit(unit: str) -> tuple[str, float]:
    """Canonical unit and multiplier for a declared unit; unknown units pass through."""
    key = unit.strip().lower()
    if key in _UNIT_TABLE:
        return _UNIT_TABLE[key]
    return unit.strip(), 1.0


@dataclass(frozen=True)
class PerfSchema:
    """Which host events a profile must carry and how to read it."""

    required: tuple[str, ...] = (ENERGY_PKG, DATA_READS, DATA_WRITES, "instructions", "cycles")
    fp_prefix: str = FP_ARITH_PREFIX
    time_event: str = TIME_EVENT
    separator: str = ";"

    def to_dict(self) -> dict:
        return {
            "required": list(self.required),
            "fp_prefix": self.fp_prefix,
            "time_event": self.time_event,
            "separator": self.separator,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PerfSchema":
        base = cls()
        return cls(
            required=tuple(d.get("required", base.required)),
            fp_prefix=d.get("fp_prefix", base.fp_prefix),
            time_event=d.get("time_event", base.time_event),
            separator=d.get("separator", base.separator),
        )


@dataclass(frozen=True)
class PerfProfile:
    events: dict[str, float]
    wall_time_s: float
    run_count: int = 1
    units: dict[str, str] = field(default_factory=dict)
    missing: frozenset[str] = frozenset()

    def __post_init__(self):
        if not (self.wall_time_s > 0 and math.isfinite(self.wall_time_s)):
            raise ValueError(f"wall_time_s must be > 0, got {self.wall_time_s}")
        if self.run_count < 1:
            raise ValueError("run_count must be positive")
        for name, value in self.events.items():
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"event {name!r} has invalid value {value}")
        both = self.missing & self.events.keys()
        if both:
            raise ValueError(f"events both present and missing: {sorted(both)}")

    def has(self, name: str) -> bool:
        return name in self.events

    def family(self, prefix: str) -> dict[str, float]:
        """All present events whose name starts with ``prefix``."""
        return {k: v for k, v in self.events.items() if k.startswith(prefix)}


@dataclass(frozen=True)
class NmcSimResult:
    cpu_cycles: float
    ipc: float
    cpu_instructions: float
    total_time_ns: float
    avg_power_mw: float
    trace_energy_pj: float

    def __post_init__(self):
        for name in NMC_FIELDS.values():
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {value}")
        if self.cpu_cycles > 0:
            expected = self.cpu_instructions / self.cpu_cycles
            if not math.isclose(self.ipc, expected, rel_tol=0.01, abs_tol=1e-12):
                raise ValueError(
                    f"ipc {self.ipc} inconsistent with instructions/cycles = {expected}"
                )


# statistic name -> field name
NMC_FIELDS = {
    "ramulator.cpu_cycles": "cpu_cycles",
    "ramulator.ipc": "ipc",
    "ramulator.cpu_instructions": "cpu_instructions",
    "ramulator.total_time": "total_time_ns",
    "Average Power": "avg_power_mw",
    "Total Trace Energy": "trace_energy_pj",
}


@dataclass(frozen=True)
class RunSpec:
    app: str
    dataset_level: int
    dataset_param: int
    threads: int
    role: str = "train"

    def __post_init__(self):
        for name in ("dataset_level", "dataset_param", "threads"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.role not in ("train", "test"):
            raise ValueError(f"role must be 'train' or 'test', got {self.role!r}")
        if not self.app:
            raise ValueError("app must be non-empty")

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.app, self.dataset_level, self.threads)

    @property
    def run_id(self) -> str:
        return f"{self.app}/L{self.dataset_level}/T{self.threads}"

    def to_dict(self) -> dict:
        return {
            "app": self.app,
            "dataset_level": self.dataset_level,
            "dataset_param": self.dataset_param,
            "threads": self.threads,
            "role": self.role,
        }


@dataclass(frozen=True)
class RunRecord:
    spec: RunSpec
    host: PerfProfile
    nmc: Optional[NmcSimResult] = None
    derived: Optional["DerivedFeatures"] = None
    label: Optional["OffloadLabel"] = None

    def __post_init__(self):
        if self.label is not None and self.nmc is None:
            raise ValueError(f"{self.spec.run_id}: a label requires NMC results")


@dataclass(frozen=True)
class ManifestEntry:
    spec: RunSpec
    perf_path: Path
    sim_paths: tuple[Path, ...] = ()
    scope: Optional[str] = None


# ---------------------------------------------------------------------------
# host profiles


def _as_text(data) -> str:
    if isinstance(data, (bytes, bytearray)):
        return bytes(data).decode("utf-8", errors="replace")
    return data


def _parse_float(token: str) -> float:
    # perf may print thousands separators in non -x mode
    return float(token.replace(",", "")) if re.fullmatch(r"[0-9,]+", token) else float(token)


def parse_perf_csv(text, schema: PerfSchema | None = None, *, separator: str | None = None,
                   source: str | None = None) -> PerfProfile:
    """Parse one (already averaged) host profile.

    Events flagged ``<not supported>`` / ``<not counted>`` and schema-required
    events that never appear end up in ``PerfProfile.missing``. Declared units
    are normalized to Joules, MiB and seconds.
    """
    schema = schema or PerfSchema()
    sep = separator or schema.separator
    text = _as_text(text)
    events: dict[str, float] = {}
    units: dict[str, str] = {}
    missing: set[str] = set()
    run_count = 1
    parsed = 0

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = re.search(r"run_count\s*=\s*(\d+)", line)
            if m:
                run_count = int(m.group(1))
                if run_count < 1:
                    raise ParseError("run_count must be positive", lineno, source)
            continue
        cols = line.split(sep)
        if len(cols) < 3:
            raise ParseError(f"expected value{sep}unit{sep}event, got {raw!r}", lineno, source)
        value_tok, unit, name = cols[0].strip(), cols[1].strip(), cols[2].strip()
        if not name:
            raise ParseError("empty event name", lineno, source)
        if name in events or name in missing:
            raise AmbiguityError(f"duplicate event {name!r}", lineno, source)
        parsed += 1
        if value_tok in MISSING_MARKERS:
            missing.add(name)
            continue
        try:
            value = _parse_float(value_tok)
        except ValueError:
            raise ParseError(f"malformed value {value_tok!r} for event {name!r}", lineno, source) from None
        if not math.isfinite(value) or value < 0:
            raise ParseError(f"value {value_tok!r} for event {name!r} must be finite and >= 0",
                             lineno, source)
        if unit:
            canon, mult = normalize_unit(unit)
            value *= mult
            units[name] = canon
        events[name] = value

    if parsed == 0:
        raise EmptyInputError("no parseable event lines", None, source)

    for name in schema.required:
        if name not in events:
            missing.add(name)

    if schema.time_event not in events:
        raise ParseError(f"wall time event {schema.time_event!r} not present", None, source)
    wall = events[schema.time_event]
    if units.get(schema.time_event) is None:
        units[schema.time_event] = "s"
    if wall <= 0:
        raise ParseError(f"wall time {wall} must be > 0", None, source)
    return PerfProfile(events=events, wall_time_s=wall, run_count=run_count,
                       units=units, missing=frozenset(missing))


def format_perf_csv(profile: PerfProfile, separator: str = ";") -> str:
    """Canonical text form; ``parse_perf_csv`` of the result reproduces ``profile``."""
    lines = [f"# run_count={profile.run_count}"]
    for name in sorted(profile.events):
        unit = profile.units.get(name, "")
        lines.append(separator.join([repr(float(profile.events[name])), unit, name, ""]))
    for name in sorted(profile.missing):
        lines.append(separator.join(["<not supported>", "", name, ""]))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# simulator statistics

_DRAMPOWER_RE = re.compile(
    r"^(Average Power|Total Trace Energy)\s*(?:\(\s*(\w+)\s*\))?\s*[:=]?\s*"
    r"([-+0-9.eE]+|nan|inf)\s*(\w+)?",
    re.IGNORECASE,
)
_ENERGY_TO_PJ = {"pj": 1.0, "nj": 1e3, "uj": 1e6, "mj": 1e9, "j": 1e12}
_POWER_TO_MW = {"mw": 1.0, "w": 1e3, "uw": 1e-3}


def parse_ramulator_stats(*texts, source: str | None = None) -> NmcSimResult:
    """Parse Ramulator (and DRAMPower) statistics into an :class:`NmcSimResult`.

    Several streams may be passed; they are read in order and a key repeated
    across or within streams is an ambiguity error. Unknown keys are ignored.
    """
    if not texts:
        raise EmptyInputError("no statistics stream given", None, source)
    found: dict[str, float] = {}
    for text in texts:
        for lineno, raw in enumerate(_as_text(text).splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            m = _DRAMPOWER_RE.match(line)
            if m:
                canonical = "Average Power" if m.group(1).lower().startswith("average") else "Total Trace Energy"
                unit = (m.group(2) or m.group(4) or "").lower()
                table = _POWER_TO_MW if canonical == "Average Power" else _ENERGY_TO_PJ
                mult = table.get(unit, 1.0)
                key, token = canonical, m.group(3)
            else:
                parts = line.split()
                if len(parts) < 2:
                    continue
                key, token, mult = parts[0], parts[1], 1.0
                if key not in NMC_FIELDS:
                    continue
            try:
                value = float(token) * mult
            except ValueError:
                raise ParseError(f"malformed value {token!r} for {key}", lineno, source) from None
            if not math.isfinite(value) or value < 0:
                raise ParseError(f"{key} must be finite and >= 0, got {token}", lineno, source)
            if key in found:
                raise AmbiguityError(f"duplicate statistic {key!r}", lineno, source)
            found[key] = value

    absent = [k for k in NMC_FIELDS if k not in found]
    if absent:
        raise MissingStatisticError(absent, source)
    kwargs = {NMC_FIELDS[k]: v for k, v in found.items()}
    try:
        return NmcSimResult(**kwargs)
    except ValueError as exc:
        raise ConsistencyError(f"{source + ': ' if source else ''}{exc}") from None


def format_ramulator_stats(sim: NmcSimResult) -> str:
    """Canonical single-stream text form of ``sim``."""
    lines = []
    for key, attr in NMC_FIELDS.items():
        value = repr(float(getattr(sim, attr)))
        if " " in key:
            lines.append(f"{key}: {value}")
        else:
            lines.append(f"{key} {value}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# manifest

MANIFEST_VERSION = 1

MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["manifest_version", "runs"],
    "properties": {
        "manifest_version": {"const": MANIFEST_VERSION},
        "runs": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["app", "dataset_level", "dataset_param", "threads", "role", "perf"],
                "properties": {
                    "app": {"type": "string", "minLength": 1},
                    "dataset_level": {"type": "integer", "minimum": 1},
                    "dataset_param": {"type": "integer", "minimum": 1},
                    "threads": {"type": "integer", "minimum": 1},
                    "role": {"enum": ["train", "test"]},
                    "perf": {"type": "string", "minLength": 1},
                    "sim": {
                        "oneOf": [
                            {"type": "string", "minLength": 1},
                            {"type": "array", "items": {"type": "string", "minLength": 1}},
                        ]
                    },
                    "scope": {"type": "string"},
                },
            },
        },
    },
}


def load_manifest(path) -> list[ManifestEntry]:
    """Read and validate a JSON run manifest.

    File paths in the manifest are resolved against the manifest's directory.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise IngestIOError(f"cannot read manifest {path}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    try:
        jsonschema.validate(doc, MANIFEST_SCHEMA)
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ManifestError(f"{path}: {loc}: {exc.message}") from None

    base = path.parent
    entries: list[ManifestEntry] = []
    seen: dict[tuple, int] = {}
    for i, run in enumerate(doc["runs"]):
        spec = RunSpec(app=run["app"], dataset_level=run["dataset_level"],
                       dataset_param=run["dataset_param"], threads=run["threads"],
                       role=run["role"])
        if spec.key in seen:
            raise ManifestError(
                f"{path}: run {i} duplicates run {seen[spec.key]} ({spec.run_id})")
        seen[spec.key] = i
        perf = base / run["perf"]
        sims = run.get("sim", ())
        sims = (sims,) if isinstance(sims, str) else tuple(sims)
        sim_paths = tuple(base / s for s in sims)
        for p in (perf, *sim_paths):
            if not p.is_file():
                raise IngestIOError(f"{path}: run {i} ({spec.run_id}): file not found: {p}")
        entries.append(ManifestEntry(spec, perf, sim_paths, run.get("scope")))
    return entries


def write_manifest(entries: Iterable[ManifestEntry], path) -> dict:
    """Write ``entries`` as a manifest with paths relative to ``path``'s directory."""
    path = Path(path)
    runs = []
    for e in entries:
        run = e.spec.to_dict()
        run["perf"] = os.path.relpath(e.perf_path, path.parent).replace(os.sep, "/")
        if e.sim_paths:
            sims = [os.path.relpath(p, path.parent).replace(os.sep, "/") for p in e.sim_paths]
            run["sim"] = sims[0] if len(sims) == 1 else sims
        if e.scope is not None:
            run["scope"] = e.scope
        runs.append(run)
    doc = {"manifest_version": MANIFEST_VERSION, "runs": runs}
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return doc


def assemble_run_records(specs: Sequence[RunSpec], profiles: Mapping[tuple, PerfProfile],
                         sims: Mapping[tuple, NmcSimResult] | None = None) -> list[RunRecord]:
    """Join specs with their profiles (required) and simulator results (optional).

    ``profiles`` and ``sims`` are keyed by ``RunSpec.key``. Output order is
    the order of ``specs``.
    """
    sims = sims or {}
    records = []
    for spec in specs:
        if spec.key not in profiles:
            raise JoinError(f"no host profile for run {spec.run_id}")
        records.append(RunRecord(spec=spec, host=profiles[spec.key], nmc=sims.get(spec.key)))
    return records


def load_corpus(manifest_path, schema: PerfSchema | None = None) -> list[RunRecord]:
    """Load every run in a manifest into :class:`RunRecord` objects."""
    entries = load_manifest(manifest_path)
    profiles, sims = {}, {}
    for e in entries:
        profiles[e.spec.key] = parse_perf_csv(e.perf_path.read_bytes(), schema, source=str(e.perf_path))
        if e.sim_paths:
            sims[e.spec.key] = parse_ramulator_stats(*(p.read_bytes() for p in e.sim_paths),
                                                     source=str(e.sim_paths[0]))
    return assemble_run_records([e.spec for e in entries], profiles, sims)
