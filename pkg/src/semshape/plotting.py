"""PNG figures written next to the CLI's CSV/JSON reports.

Figures are built on bare ``Figure`` objects with the Agg canvas, so no
pyplot global state is touched and the module is safe to call from
library code. PNG metadata is stripped so reruns give identical bytes.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

__all__ = [
    "plot_local_offsets",
    "plot_requested_vs_achieved",
    "plot_fusion",
    "plot_vertex_variance",
    "plot_reconstruction",
]

_STYLE = {"dpi": 120}


def _new(width=7.0, height=4.0, ncols=1):
    fig = Figure(figsize=(width, height))
    FigureCanvasAgg(fig)
    axes = fig.subplots(1, ncols)
    return fig, axes


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, format="png", dpi=_STYLE["dpi"], metadata={"Software": None})
    return path


def plot_local_offsets(report, path) -> Path:
    """Heat map of achieved offsets (mm): one row per probe, one column per output."""
    data = np.asarray(report.achieved_mm)
    names = list(report.output_names)
    fig, ax = _new(max(6.0, 0.35 * len(names) + 2), max(2.5, 0.35 * len(report.probes) + 1.5))
    lim = float(np.max(np.abs(data))) if data.size else 1.0
    im = ax.imshow(data, cmap="RdBu_r", vmin=-lim, vmax=lim, aspect="auto")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=70, ha="right", fontsize=7)
    ax.set_yticks(range(len(report.probes)))
    ax.set_yticklabels([f"{n} {v:+g}" for n, v in report.probes], fontsize=7)
    fig.colorbar(im, ax=ax, label="achieved offset (mm)")
    ax.set_title("local offsets")
    return _save(fig, path)


def plot_requested_vs_achieved(names, requested_mm, achieved_mm, path) -> Path:
    """Grouped bars of requested and achieved offsets per output (mm)."""
    x = np.arange(len(names))
    fig, ax = _new(max(6.0, 0.35 * len(names) + 2))
    ax.bar(x - 0.2, requested_mm, 0.4, label="requested")
    ax.bar(x + 0.2, achieved_mm, 0.4, label="achieved")
    ax.axhline(0, color="k", lw=0.5)
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=70, ha="right", fontsize=7)
    ax.set_ylabel("offset (mm)")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_fusion(report: dict, path) -> Path:
    """Per-slot fused and naive means with one-sigma error bars (mm)."""
    slots = report["slots"]
    x = np.arange(len(slots))
    fused = np.array([s["fused_mean_mm"] for s in slots])
    fused_sd = np.sqrt([s["fused_variance_mm2"] for s in slots])
    naive = np.array([s["naive_mean_mm"] for s in slots])
    naive_sd = np.sqrt([s["naive_variance_mm2"] for s in slots])
    fig, ax = _new(max(6.0, 0.35 * len(slots) + 2))
    ax.errorbar(x - 0.1, naive, yerr=naive_sd, fmt="s", ms=3, capsize=2, label="naive average")
    ax.errorbar(x + 0.1, fused, yerr=fused_sd, fmt="o", ms=3, capsize=2, label="fused")
    ax.set_xticks(x)
    ax.set_xticklabels([s["name"] for s in slots], rotation=70, ha="right", fontsize=7)
    ax.set_ylabel("measurement offset (mm)")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_vertex_variance(vertices, variance, path) -> Path:
    """Front (x-y) and side (z-y) views coloured by per-direction std (mm).

    ``variance`` is the (V, 3) directional variance in m^2.
    """
    v = np.asarray(vertices)
    sd = np.sqrt(np.clip(np.asarray(variance), 0, None)) * 1000.0
    fig, axes = _new(10.0, 4.5, ncols=3)
    for ax, (label, col) in zip(axes, (("x", 0), ("y", 1), ("z", 2))):
        horiz = v[:, 2] if col == 2 else v[:, 0]
        sc = ax.scatter(horiz, v[:, 1], c=sd[:, col], s=4, cmap="viridis")
        ax.set_aspect("equal")
        ax.set_title(f"std {label} (mm)")
        ax.set_xlabel("z (m)" if col == 2 else "x (m)")
        fig.colorbar(sc, ax=ax, shrink=0.8)
    axes[0].set_ylabel("y (m)")
    return _save(fig, path)


def plot_reconstruction(report: dict, path) -> Path:
    fig, ax = _new(4.0, 3.0)
    keys = ["meas_mae_mm", "pve_t_mm"]
    ax.bar(range(2), [report[k] for k in keys], color=["C0", "C1"])
    ax.set_xticks(range(2))
    ax.set_xticklabels(["Meas. MAE", "PVE-T"])
    ax.set_ylabel("mm")
    ax.set_title(f"{report['num_bodies']} bodies")
    return _save(fig, path)
