"""Reproducible synthetic corpora with a planted feature -> IPC -> label map.

Every run gets a latent EDP speedup ``s`` drawn from one of three bands
centred on 0.5 (no), 1.5 (maybe) and 3.0 (yes). Applications are dealt to
the bands round-robin; inside a band ``s`` moves with the application and
with the dataset level. Then

* ``log10(FLOP/Byte) = log_ai_intercept - log_ai_slope * s`` on the host,
* ``nmc_ipc = ipc_intercept + ipc_slope * s`` on the NMC side,

so the NMC IPC is an affine function of the log arithmetic intensity, and
host and NMC energies are chosen so that Host_EDP / NMC_EDP equals ``s``.

Noise (all multiplicative, Gaussian, clipped at three standard deviations):
the simulator IPC gets relative sigma ``noise_sigma``; the host package
energy and the NMC trace energy get ``noise_sigma / 2`` each. With the
default sigma of 0.05 the measured speedup stays within a factor
[0.860, 1.163] of ``s``, which keeps every band on its own side of the
label boundaries 1 and 2 (band half-width 0.2).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ConfigError
from .ingest import (
    DATA_READS,
    DATA_WRITES,
    ENERGY_PKG,
    ENERGY_PSYS,
    ENERGY_RAM,
    ManifestEntry,
    PerfProfile,
    RunSpec,
    format_perf_csv,
    write_manifest,
)
from .metrics import MIB, MachineRoofline, label_decision

NMC_CLOCK_GHZ = 1.25
BAND_NAMES = ("no", "maybe", "yes")


@dataclass(frozen=True)
class SynthConfig:
    n_apps: int = 9
    levels_per_app: int = 7
    include_test_level: bool = True
    threads: tuple[int, ...] = (8, 16)
    noise_sigma: float = 0.05
    seed: int = 0
    band_centers: tuple[float, float, float] = (0.5, 1.5, 3.0)
    band_half_width: float = 0.2
    ipc_intercept: float = 0.05
    ipc_slope: float = 0.3
    log_ai_intercept: float = 1.0
    log_ai_slope: float = 0.9

    def __post_init__(self):
        if self.n_apps < 2:
            raise ConfigError("n_apps must be >= 2")
        if self.levels_per_app < 2:
            raise ConfigError("levels_per_app must be >= 2")
        if not self.threads or any(t < 1 for t in self.threads):
            raise ConfigError("threads must be a non-empty set of positive integers")
        if len(set(self.threads)) != len(self.threads):
            raise ConfigError("threads must not repeat")
        if not self.noise_sigma >= 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.ipc_slope == 0 or self.log_ai_slope == 0:
            raise ConfigError("planted slopes must be non-zero (the mapping must be injective)")
        if len(self.band_centers) != 3 or not self.band_half_width > 0:
            raise ConfigError("need three band centres and a positive half-width")
        lo = min(self.band_centers) - self.band_half_width
        hi = max(self.band_centers) + self.band_half_width
        if lo <= 0:
            raise ConfigError("speedup bands must stay above 0")
        if min(self.ipc_intercept + self.ipc_slope * lo, self.ipc_intercept + self.ipc_slope * hi) <= 0:
            raise ConfigError("planted IPC map yields non-positive IPC")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["threads"] = list(self.threads)
        d["band_centers"] = list(self.band_centers)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "SynthConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown synth option(s): {', '.join(sorted(unknown))}")
        d = dict(d)
        for key in ("threads", "band_centers"):
            if key in d:
                d[key] = tuple(d[key])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def planted_ipc(self, s: float) -> float:
        return self.ipc_intercept + self.ipc_slope * s

    def speedup_noise_bounds(self) -> tuple[float, float]:
        """Extreme factors between measured and planted speedup."""
        e = 1.5 * self.noise_sigma
        if e >= 1:
            return 0.0, math.inf
        return (1 - e) / (1 + e), (1 + e) / (1 - e)

    def margin_ok(self) -> bool:
        """Whether clipped noise can never move a run across a label boundary."""
        lo_f, hi_f = self.speedup_noise_bounds()
        for center in self.band_centers:
            a = center - self.band_half_width
            b = center + self.band_half_width
            if label_decision(a * lo_f) != label_decision(b * hi_f):
                return False
            if label_decision(a) != label_decision(b):
                return False
        return True


@dataclass
class SynthCorpus:
    root: Path
    manifest: Path
    pipeline_config: Path
    ground_truth: Path
    rows: list[dict] = field(default_factory=list)

    @property
    def ipc_scale(self) -> float:
        """Largest planted (noise-free) IPC in the corpus."""
        return max(r["planted_ipc"] for r in self.rows)


def _app_layout(cfg: SynthConfig):
    bands = [i % 3 for i in range(cfg.n_apps)]
    if len(set(bands)) < 3:
        raise ConfigError("the planted mapping needs at least 3 applications to cover all three labels")
    offsets = []
    for i, band in enumerate(bands):
        members = [j for j, b in enumerate(bands) if b == band]
        rank = members.index(i)
        offsets.append(0.0 if len(members) == 1 else -0.5 + rank / (len(members) - 1))
    return bands, offsets


def _clipped(rng: np.random.Generator, sigma: float) -> float:
    if sigma == 0:
        return 0.0
    return float(np.clip(rng.normal(0.0, sigma), -3 * sigma, 3 * sigma))


def _fmt(x: float) -> str:
    return repr(float(x))


def generate_synthetic_corpus(cfg: SynthConfig, out_dir) -> SynthCorpus:
    """Write manifest, host profiles, simulator statistics, a ground-truth
    table and a ready-to-use pipeline config under ``out_dir``."""
    out = Path(out_dir)
    (out / "perf").mkdir(parents=True, exist_ok=True)
    (out / "sim").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    machine = MachineRoofline.default()
    bands, offsets = _app_layout(cfg)
    n_levels = cfg.levels_per_app + (1 if cfg.include_test_level else 0)

    entries = []
    truth = []
    for i in range(cfg.n_apps):
        app = f"app{i + 1:02d}"
        band = bands[i]
        base_param = 1000 + 500 * (i % 4)
        flop_base = 2e9 * (1 + 0.3 * i)
        efficiency = 0.08 + 0.02 * (i % 4)
        for level in range(1, n_levels + 1):
            role = "test" if level > cfg.levels_per_app else "train"
            param = int(round(base_param * 1.25 ** (level - 1)))
            u = offsets[i] + (level - 1) / cfg.levels_per_app - 0.5
            s = cfg.band_centers[band] + cfg.band_half_width * u
            ai = 10 ** (cfg.log_ai_intercept - cfg.log_ai_slope * s)
            flops = flop_base * (param / base_param) ** 2
            dram_bytes = flops / ai
            ipc = cfg.planted_ipc(s)
            for threads in cfg.threads:
                spec = RunSpec(app, level, param, threads, role)
                scale = (threads / max(cfg.threads)) ** 0.6
                gflops = machine.attainable(ai, "l3") * efficiency * scale
                t = flops / (gflops * 1e9)
                energy = (30.0 + 3.5 * threads) * t
                host_instr = 3.0 * flops + dram_bytes / 16

                # NMC side, noise-free: EDP chosen so that host/nmc = s
                cycles = host_instr / ipc
                time_ns = cycles / NMC_CLOCK_GHZ
                nmc_edp = energy * t / s
                trace_j = nmc_edp / (time_ns * 1e-9)

                eps_ipc = _clipped(rng, cfg.noise_sigma)
                eps_host = _clipped(rng, cfg.noise_sigma / 2)
                eps_nmc = _clipped(rng, cfg.noise_sigma / 2)
                ipc_meas = ipc * (1 + eps_ipc)
                energy_meas = energy * (1 + eps_host)
                trace_meas = trace_j * (1 + eps_nmc)

                fp = {
                    "fp_arith_inst_retired.scalar_double": 0.5 * flops,
                    "fp_arith_inst_retired.128b_packed_double": 0.3 * flops,
                    "fp_arith_inst_retired.256b_packed_double": 0.2 * flops,
                }
                events = {
                    ENERGY_PKG: energy_meas,
                    ENERGY_PSYS: energy_meas * 1.3,
                    DATA_READS: 0.65 * dram_bytes / MIB,
                    DATA_WRITES: 0.35 * dram_bytes / MIB,
                    "instructions": host_instr,
                    "cycles": host_instr / 1.5,
                    "cache-misses": dram_bytes / 64,
                    "LLC-loads": 1.3 * dram_bytes / 64,
                    "branches": 0.1 * host_instr,
                    "branch-misses": 0.001 * host_instr,
                    "context-switches": 10.0 * threads,
                    "duration_time": t,
                    **fp,
                }
                units = {ENERGY_PKG: "Joules", ENERGY_PSYS: "Joules", DATA_READS: "MiB",
                         DATA_WRITES: "MiB", "duration_time": "s"}
                profile = PerfProfile(events=events, wall_time_s=t, run_count=5, units=units,
                                      missing=frozenset({ENERGY_RAM}))
                stem = f"{app}_L{level}_T{threads}"
                perf_path = out / "perf" / f"{stem}.csv"
                perf_path.write_text(format_perf_csv(profile))

                ram_path = out / "sim" / f"{stem}.stats"
                ram_path.write_text(
                    f"ramulator.cpu_cycles {_fmt(cycles)}\n"
                    f"ramulator.ipc {_fmt(ipc_meas)}\n"
                    f"ramulator.cpu_instructions {_fmt(ipc_meas * cycles)}\n"
                    f"ramulator.total_time {_fmt(time_ns)}  # ns\n"
                )
                t_nmc = time_ns * 1e-9
                power_path = out / "sim" / f"{stem}.drampower"
                power_path.write_text(
                    f"Average Power: {_fmt(trace_meas / t_nmc * 1e3)} mW\n"
                    f"Total Trace Energy: {_fmt(trace_meas * 1e12)} pJ\n"
                )
                entries.append(ManifestEntry(spec, perf_path, (ram_path, power_path)))
                truth.append({
                    "run": spec.run_id, "app": app, "dataset_level": level,
                    "dataset_param": param, "threads": threads, "role": role,
                    "band": BAND_NAMES[band], "planted_speedup": s, "planted_ipc": ipc,
                    "planted_flop_per_byte": ai, "label": label_decision(s).value,
                })

    labels = {r["label"] for r in truth}
    if labels != set(BAND_NAMES):
        raise ConfigError(f"planted mapping only produces labels {sorted(labels)}")

    manifest = out / "manifest.json"
    write_manifest(entries, manifest)

    gt = out / "ground_truth.csv"
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(truth[0]), lineterminator="\n")
    w.writeheader()
    for row in truth:
        w.writerow({k: _fmt(v) if isinstance(v, float) else v for k, v in row.items()})
    gt.write_text(buf.getvalue())

    (out / "synth_config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    pipeline = out / "pipeline.json"
    pipeline.write_text(json.dumps({"manifest": "manifest.json", "seed": cfg.seed}, indent=2) + "\n")
    return SynthCorpus(out, manifest, pipeline, gt, truth)
