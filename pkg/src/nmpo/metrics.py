"""Derived features, energy-delay products, offload labels and roofline regions."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

from .errors import ConfigError, DomainError, FeatureError
from .ingest import (
    DATA_READS,
    DATA_WRITES,
    ENERGY_PKG,
    ENERGY_RAM,
    FP_ARITH_PREFIX,
    RunRecord,
)

MIB = 2 ** 20
GB = 1e9


class OffloadLabel(str, enum.Enum):
    YES = "yes"
    MAYBE = "maybe"
    NO = "no"

    def __str__(self):
        return self.value


# priority order, also used to break tied votes
LABEL_ORDER = (OffloadLabel.YES, OffloadLabel.MAYBE, OffloadLabel.NO)


class Region(str, enum.Enum):
    COMPUTE_BOUND = "compute_bound"
    DRAM_BOUND = "dram_bound"
    L3_BOUND = "l3_bound"

    def __str__(self):
        return self.value


HOST_FEATURES = (
    "host_total_energy_j",
    "host_edp_js",
    "host_dram_access_gb",
    "host_flops",
    "host_gflops_per_s",
    "host_flop_per_byte",
)
NMC_FEATURES = (
    "nmc_ipc",
    "nmc_total_time_ns",
    "nmc_trace_energy_pj",
    "nmc_edp_js",
    "edp_speedup",
)
# letters used in the correlation plot legend
FEATURE_SYMBOLS = dict(zip(HOST_FEATURES + NMC_FEATURES, "ABCDEFGHIJK"))


@dataclass(frozen=True)
class UnitConfig:
    """Which events feed energy, traffic and FLOP counts."""

    energy_events: tuple[str, ...] = (ENERGY_PKG,)
    include_dram_energy: bool = False
    reads_event: str = DATA_READS
    writes_event: str = DATA_WRITES
    fp_prefix: str = FP_ARITH_PREFIX
    fp_weights: Mapping[str, float] = field(default_factory=dict)

    @property
    def energy_sources(self) -> tuple[str, ...]:
        if self.include_dram_energy and ENERGY_RAM not in self.energy_events:
            return self.energy_events + (ENERGY_RAM,)
        return self.energy_events

    def to_dict(self) -> dict:
        return {
            "energy_events": list(self.energy_events),
            "include_dram_energy": self.include_dram_energy,
            "reads_event": self.reads_event,
            "writes_event": self.writes_event,
            "fp_prefix": self.fp_prefix,
            "fp_weights": dict(sorted(self.fp_weights.items())),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "UnitConfig":
        base = cls()
        return cls(
            energy_events=tuple(d.get("energy_events", base.energy_events)),
            include_dram_energy=bool(d.get("include_dram_energy", base.include_dram_energy)),
            reads_event=d.get("reads_event", base.reads_event),
            writes_event=d.get("writes_event", base.writes_event),
            fp_prefix=d.get("fp_prefix", base.fp_prefix),
            fp_weights=dict(d.get("fp_weights", {})),
        )


@dataclass(frozen=True)
class DerivedFeatures:
    host_total_energy_j: float
    host_edp_js: float
    host_dram_access_gb: float
    host_flops: float
    host_gflops_per_s: float
    host_flop_per_byte: float
    nmc_ipc: Optional[float] = None
    nmc_total_time_ns: Optional[float] = None
    nmc_trace_energy_pj: Optional[float] = None
    nmc_edp_js: Optional[float] = None
    edp_speedup: Optional[float] = None

    def __post_init__(self):
        for name, value in self.as_dict().items():
            if value is not None and not (math.isfinite(value) and value >= 0):
                raise DomainError(f"derived feature {name} = {value} is not finite and >= 0")
        if (self.edp_speedup is not None) != (self.nmc_edp_js is not None and self.nmc_edp_js > 0):
            raise DomainError("edp_speedup must be present exactly when nmc_edp_js > 0")

    def as_dict(self) -> dict[str, Optional[float]]:
        return {name: getattr(self, name) for name in HOST_FEATURES + NMC_FEATURES}


def compute_host_edp(energy_j: float, time_s: float) -> float:
    if not time_s > 0:
        raise DomainError(f"execution time must be > 0, got {time_s}")
    if energy_j < 0:
        raise DomainError(f"energy must be >= 0, got {energy_j}")
    return energy_j * time_s


def compute_nmc_edp(trace_energy_pj: float, total_time_ns: float) -> float:
    """EDP in J*s from simulator energy (pJ) and time (ns)."""
    if not total_time_ns > 0:
        raise DomainError(f"simulated time must be > 0, got {total_time_ns}")
    if trace_energy_pj < 0:
        raise DomainError(f"trace energy must be >= 0, got {trace_energy_pj}")
    return (trace_energy_pj * 1e-12) * (total_time_ns * 1e-9)


def compute_edp_speedup(host_edp: float, nmc_edp: float) -> float:
    if not nmc_edp > 0:
        raise DomainError(f"NMC EDP must be > 0, got {nmc_edp}")
    return host_edp / nmc_edp


LABEL_CONVENTIONS = ("lower", "upper")


def label_decision(edp_speedup: float, convention: str = "lower") -> OffloadLabel:
    """yes above 2, maybe in (1, 2], no at or below 1.

    ``convention="upper"`` moves the two boundary values into the upper
    class instead (2 -> yes, 1 -> maybe).
    """
    if not math.isfinite(edp_speedup):
        raise DomainError(f"EDP speedup must be finite, got {edp_speedup}")
    if convention == "lower":
        yes, maybe = edp_speedup > 2, edp_speedup > 1
    elif convention == "upper":
        yes, maybe = edp_speedup >= 2, edp_speedup >= 1
    else:
        raise ConfigError(f"unknown label convention {convention!r}")
    if yes:
        return OffloadLabel.YES
    if maybe:
        return OffloadLabel.MAYBE
    return OffloadLabel.NO


def host_flops(events: Mapping[str, float], cfg: UnitConfig) -> float:
    family = {k: v for k, v in events.items() if k.startswith(cfg.fp_prefix)}
    if not family:
        raise FeatureError(f"missing required event {cfg.fp_prefix}", [cfg.fp_prefix])
    return sum(v * cfg.fp_weights.get(k, 1.0) for k, v in sorted(family.items()))


def derive_features(rec: RunRecord, cfg: UnitConfig | None = None) -> DerivedFeatures:
    cfg = cfg or UnitConfig()
    ev = rec.host.events
    needed = list(cfg.energy_sources) + [cfg.reads_event, cfg.writes_event]
    absent = [name for name in needed if name not in ev]
    if not any(k.startswith(cfg.fp_prefix) for k in ev):
        absent.append(cfg.fp_prefix)
    if absent:
        raise FeatureError(f"{rec.spec.run_id}: missing required event(s): {', '.join(absent)}",
                           absent)

    t = rec.host.wall_time_s
    energy = sum(ev[name] for name in cfg.energy_sources)
    flops = host_flops(ev, cfg)
    dram_bytes = (ev[cfg.reads_event] + ev[cfg.writes_event]) * MIB
    if dram_bytes == 0:
        if flops > 0:
            raise DomainError(f"{rec.spec.run_id}: zero DRAM traffic, arithmetic intensity undefined")
        intensity = 0.0
    else:
        intensity = flops / dram_bytes

    nmc = {}
    if rec.nmc is not None:
        s = rec.nmc
        nmc_edp = compute_nmc_edp(s.trace_energy_pj, s.total_time_ns)
        host_edp = compute_host_edp(energy, t)
        nmc = dict(
            nmc_ipc=s.ipc,
            nmc_total_time_ns=s.total_time_ns,
            nmc_trace_energy_pj=s.trace_energy_pj,
            nmc_edp_js=nmc_edp,
            edp_speedup=compute_edp_speedup(host_edp, nmc_edp) if nmc_edp > 0 else None,
        )
    return DerivedFeatures(
        host_total_energy_j=energy,
        host_edp_js=compute_host_edp(energy, t),
        host_dram_access_gb=dram_bytes / GB,
        host_flops=flops,
        host_gflops_per_s=flops / t / 1e9,
        host_flop_per_byte=intensity,
        **nmc,
    )


def annotate(records: Sequence[RunRecord], cfg: UnitConfig | None = None,
             convention: str = "lower") -> list[RunRecord]:
    """Attach derived features and, where NMC data allows, the offload label."""
    out = []
    for rec in records:
        d = derive_features(rec, cfg)
        label = label_decision(d.edp_speedup, convention) if d.edp_speedup is not None else None
        out.append(replace(rec, derived=d, label=label))
    return out


# ---------------------------------------------------------------------------
# roofline

DEFAULT_PEAK_GFLOPS = 300.8
DEFAULT_RIDGE_DRAM = 7.05
DEFAULT_RIDGE_L3 = 0.73


@dataclass(frozen=True)
class MachineRoofline:
    peak_gflops: float
    dram_bw_gbs: float
    l3_bw_gbs: float

    def __post_init__(self):
        if not self.peak_gflops > 0:
            raise ConfigError("peak_gflops must be > 0")
        if not self.dram_bw_gbs > 0:
            raise ConfigError("dram_bw_gbs must be > 0")
        if not self.l3_bw_gbs >= self.dram_bw_gbs:
            raise ConfigError("l3_bw_gbs must be >= dram_bw_gbs")

    @property
    def ridge_dram(self) -> float:
        return self.peak_gflops / self.dram_bw_gbs

    @property
    def ridge_l3(self) -> float:
        return self.peak_gflops / self.l3_bw_gbs

    @classmethod
    def from_ridges(cls, peak_gflops: float, ridge_dram: float, ridge_l3: float) -> "MachineRoofline":
        if not (ridge_dram > 0 and ridge_l3 > 0):
            raise ConfigError("ridge points must be > 0")
        return cls(peak_gflops, peak_gflops / ridge_dram, peak_gflops / ridge_l3)

    @classmethod
    def default(cls) -> "MachineRoofline":
        return cls.from_ridges(DEFAULT_PEAK_GFLOPS, DEFAULT_RIDGE_DRAM, DEFAULT_RIDGE_L3)

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "MachineRoofline":
        """Accept either bandwidths or ridge points (ridges win if both are given)."""
        if not d:
            return cls.default()
        peak = float(d.get("peak_gflops", DEFAULT_PEAK_GFLOPS))
        if "ridge_dram" in d or "ridge_l3" in d:
            return cls.from_ridges(peak, float(d.get("ridge_dram", DEFAULT_RIDGE_DRAM)),
                                   float(d.get("ridge_l3", DEFAULT_RIDGE_L3)))
        if "dram_bw_gbs" in d and "l3_bw_gbs" in d:
            return cls(peak, float(d["dram_bw_gbs"]), float(d["l3_bw_gbs"]))
        return cls.from_ridges(peak, DEFAULT_RIDGE_DRAM, DEFAULT_RIDGE_L3)

    def to_dict(self) -> dict:
        return {"peak_gflops": self.peak_gflops, "dram_bw_gbs": self.dram_bw_gbs,
                "l3_bw_gbs": self.l3_bw_gbs}

    def attainable(self, ai: float, roof: str = "dram") -> float:
        bw = self.dram_bw_gbs if roof == "dram" else self.l3_bw_gbs
        return min(self.peak_gflops, bw * ai)


@dataclass(frozen=True)
class RooflinePoint:
    app: str
    ai: float
    perf: float
    region: Region


def classify_intensity(ai: float, machine: MachineRoofline) -> Region:
    if not (ai > 0 and math.isfinite(ai)):
        raise DomainError(f"arithmetic intensity must be > 0, got {ai}")
    if ai >= machine.ridge_dram:
        return Region.COMPUTE_BOUND
    if ai >= machine.ridge_l3:
        return Region.DRAM_BOUND
    return Region.L3_BOUND


def roofline_classify(app: str, ai: float, perf: float,
                      machine: MachineRoofline | None = None) -> RooflinePoint:
    machine = machine or MachineRoofline.default()
    if not perf > 0:
        raise DomainError(f"achieved performance must be > 0, got {perf}")
    return RooflinePoint(app, ai, perf, classify_intensity(ai, machine))
