"""Figures written next to the benchmark and ingestion reports."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 3.6),
    "figure.dpi": 120,
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.fontsize": 8,
    "legend.frameon": False,
}


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def latency_histogram(samples: Sequence[float], path, title: str = "Submit-to-commit latency") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        if samples:
            ax.hist(samples, bins=min(40, max(5, len(samples) // 10)), color="#3b6ea5", alpha=0.85)
            lo, avg, hi = min(samples), sum(samples) / len(samples), max(samples)
            for x, label, style in ((lo, "min", ":"), (avg, "avg", "--"), (hi, "max", ":")):
                ax.axvline(x, color="#b03a2e", linestyle=style, linewidth=1, label=f"{label} {x:.2f} s")
            ax.legend()
        else:
            ax.text(0.5, 0.5, "no committed transactions", ha="center", va="center", transform=ax.transAxes)
        ax.set_xlabel("latency (s)")
        ax.set_ylabel("transactions")
        ax.set_title(title)
        return _save(fig, path)


def throughput_timeline(commit_times_s: Sequence[float], path, bin_s: float = 0.1,
                        title: str = "Committed throughput") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        if commit_times_s:
            t0 = min(commit_times_s)
            n_bins = int((max(commit_times_s) - t0) / bin_s) + 1
            counts = [0] * n_bins
            for t in commit_times_s:
                counts[int((t - t0) / bin_s)] += 1
            xs = [t0 + i * bin_s for i in range(n_bins)]
            ax.step(xs, [c / bin_s for c in counts], where="post", color="#3b6ea5")
        ax.set_xlabel("time (s)")
        ax.set_ylabel("tx/s")
        ax.set_title(title)
        return _save(fig, path)


def history_plot(readings: Sequence[dict], path, title: str = "Committed silo readings") -> Path:
    """Temperature, humidity and NH3 against sequence number."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(3, 1, sharex=True, figsize=(6.4, 5.0))
        seqs = [r["seq"] for r in readings]
        for ax, name, unit in zip(axes, ("temperature", "humidity", "nh3"), ("°C", "% RH", "ppm")):
            ax.plot(seqs, [float(r[name]) for r in readings], marker=".", linewidth=0.8)
            ax.set_ylabel(f"{name} ({unit})")
        axes[-1].set_xlabel("sequence number")
        axes[0].set_title(title)
        return _save(fig, path)
