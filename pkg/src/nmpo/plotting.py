"""Figures for report documents, rendered off-screen to PNG."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import LABELS  # noqa: E402

LABEL_COLORS = {"yes": "#2a9d8f", "maybe": "#e9c46a", "no": "#e76f51"}
REGION_MARKERS = {"compute_bound": "^", "dram_bound": "s", "l3_bound": "o", None: "x"}

STYLE = {
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
}


def _save(fig, path: Path) -> Path:
    # no Software tag, so the bytes depend only on the data
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_roofline(doc):
    meta = doc.meta
    m = meta["machine"]
    fig, ax = plt.subplots()
    ai = np.array(doc.column("ai"), dtype=float)
    lo = min(0.01, ai.min() / 2) if ai.size else 0.01
    hi = max(1000.0, ai.max() * 2) if ai.size else 1000.0
    xs = np.logspace(np.log10(lo), np.log10(hi), 200)
    ax.plot(xs, np.minimum(m["peak_gflops"], m["dram_bw_gbs"] * xs), "k-", lw=1, label="DRAM roof")
    ax.plot(xs, np.minimum(m["peak_gflops"], m["l3_bw_gbs"] * xs), "k--", lw=1, label="L3 roof")
    for region, marker in REGION_MARKERS.items():
        pts = [r for r in doc.rows if r["region"] == region]
        if pts:
            ax.scatter([r["ai"] for r in pts], [r["gflops"] for r in pts], marker=marker, s=18,
                       label=str(region))
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("arithmetic intensity [FLOP/Byte]")
    ax.set_ylabel("performance [GFLOP/s]")
    ax.legend(loc="lower right")
    return fig


def plot_energy_time(doc):
    fig, ax = plt.subplots()
    ax.scatter(doc.column("host_time_s"), doc.column("host_energy_j"), s=14, label="host")
    nmc = [r for r in doc.rows if r["nmc_edp_js"] is not None]
    if nmc:
        ax.scatter([r["nmc_time_s"] for r in nmc], [r["nmc_energy_j"] for r in nmc], s=14, marker="s",
                   label="NMC")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("execution time [s]")
    ax.set_ylabel("energy [J]")
    ax.legend()
    return fig


def plot_edp_speedup(doc):
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    x = np.arange(len(doc.rows))
    colors = [LABEL_COLORS.get(r["label"], "grey") for r in doc.rows]
    ax.bar(x, doc.column("edp_speedup"), color=colors, width=0.8)
    ax.axhline(1.0, color="k", lw=0.8)
    ax.axhline(2.0, color="k", lw=0.8, ls="--")
    ax.set_yscale("log")
    apps = doc.column("app")
    ticks = [i for i, a in enumerate(apps) if i == 0 or apps[i - 1] != a]
    ax.set_xticks(ticks)
    ax.set_xticklabels([apps[i] for i in ticks], rotation=45, ha="right")
    ax.set_ylabel("EDP speedup (host / NMC)")
    return fig


def plot_profiler_overhead(doc):
    fig, ax = plt.subplots()
    x = np.arange(len(doc.rows))
    colors = ["#e76f51" if r["outlier"] else "#264653" for r in doc.rows]
    ax.bar(x, doc.column("ratio"), color=colors)
    lo, hi = doc.meta["band"]
    ax.axhline(lo, color="k", lw=0.8, ls="--")
    ax.set_yscale("log")
    ax.set_xticks(x)
    ax.set_xticklabels(doc.column("app"), rotation=45, ha="right")
    ax.set_ylabel("characterization time ratio")
    return fig


def plot_confusion(doc):
    labels = [c for c in doc.columns if c != "actual"]
    counts = np.array([[r[l] for l in labels] for r in doc.rows])
    fig, ax = plt.subplots(figsize=(4.0, 3.6))
    ax.imshow(counts, cmap="Blues")
    ax.grid(False)
    for i in range(counts.shape[0]):
        for j in range(counts.shape[1]):
            ax.text(j, i, str(counts[i, j]), ha="center", va="center")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels)
    ax.set_yticks(range(len(labels)))
    ax.set_yticklabels(labels)
    ax.set_xlabel("predicted")
    ax.set_ylabel("actual")
    return fig


def plot_probabilities(doc):
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    x = np.arange(len(doc.rows))
    bottom = np.zeros(len(doc.rows))
    for l in LABELS:
        v = np.array(doc.column(f"p_{l}"), dtype=float)
        ax.bar(x, v, bottom=bottom, color=LABEL_COLORS[l], label=l, width=0.8)
        bottom += v
    ax.set_xticks(x)
    ax.set_xticklabels(doc.column("run"), rotation=90, fontsize=6)
    ax.set_ylabel("class probability")
    ax.legend(loc="upper right")
    return fig


def plot_accuracy(doc):
    rows = [r for r in doc.rows if r["scope"] == "app"]
    fig, ax = plt.subplots()
    ax.bar([r["app"] for r in rows], [r["accuracy"] for r in rows], color="#264653")
    ax.axhline(doc.meta["mean_over_apps"], color="k", lw=0.8, ls="--", label="mean over apps")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("accuracy")
    ax.tick_params(axis="x", rotation=45)
    ax.legend(loc="lower right")
    return fig


def plot_correlation(doc):
    names = [c for c in doc.columns if c != "feature"]
    r = np.array([[row[n] for n in names] for row in doc.rows])
    fig, ax = plt.subplots(figsize=(6.5, 5.5))
    im = ax.imshow(r, cmap="RdBu_r", vmin=-1, vmax=1)
    ax.grid(False)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=90, fontsize=6)
    ax.set_yticks(range(len(names)))
    ax.set_yticklabels(names, fontsize=6)
    fig.colorbar(im, ax=ax, label="Pearson r")
    fig.tight_layout()
    return fig


PLOTTERS = {
    "roofline": plot_roofline,
    "energy_time": plot_energy_time,
    "edp_speedup": plot_edp_speedup,
    "profiler_overhead": plot_profiler_overhead,
    "confusion": plot_confusion,
    "loao_confusion": plot_confusion,
    "predictions": plot_probabilities,
    "loao_predictions": plot_probabilities,
    "accuracy": plot_accuracy,
    "loao_accuracy": plot_accuracy,
    "correlation": plot_correlation,
}


def render_figures(docs: dict, out_dir) -> list[Path]:
    out = Path(out_dir)
    written = []
    with plt.rc_context(STYLE):
        for name, doc in docs.items():
            plot = PLOTTERS.get(name)
            if plot is None or not doc.rows:
                continue
            written.append(_save(plot(doc), out / f"{name}.png"))
    return written
