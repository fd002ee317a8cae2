"""Figures written next to the CLI's delimited outputs."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def benchmark_figure(reports, path) -> None:
    """Per-replication values for each benchmark row, with the row mean marked."""
    fig, ax = plt.subplots(figsize=(1.6 + 1.4 * len(reports), 3.6))
    rng = np.random.default_rng(0)
    for k, rep in enumerate(reports):
        vals = np.asarray(rep.values, dtype=float)
        if vals.size:
            ax.scatter(k + rng.uniform(-0.15, 0.15, vals.size), vals, s=10, alpha=0.6, color="tab:blue")
        ax.hlines(rep.mean_value, k - 0.3, k + 0.3, color="tab:red", linewidth=2)
    ax.set_xticks(range(len(reports)))
    ax.set_xticklabels([f"{r.scenario}\nn={r.n}" for r in reports])
    ax.set_ylabel("value of the estimated regime")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def coverage_figure(stage_fits, path) -> None:
    """Subjects covered by each clause, one group of bars per stage."""
    fig, ax = plt.subplots(figsize=(2 + 0.9 * len(stage_fits), 3.6))
    for k, fit in enumerate(stage_fits):
        counts = fit.diagnostics["covered_counts"]
        bottom = 0
        for c, count in enumerate(counts):
            ax.bar(k, count, bottom=bottom, color=plt.cm.tab10(c % 10), edgecolor="white")
            bottom += count
    ax.set_xticks(range(len(stage_fits)))
    ax.set_xticklabels([f"stage {f.stage}" for f in stage_fits])
    ax.set_ylabel("subjects covered (stacked by clause)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
