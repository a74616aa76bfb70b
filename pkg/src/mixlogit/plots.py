"""Figure rendering for the report paths.

Every CLI command that writes a delimited report also renders a small
matplotlib figure next to it: training trajectories (loss and the
strength distribution's mean/variance), subgroup margin panels with
micro/macro reference lines, margin gains against a baseline, and
runtime ratios. Files only; nothing opens a window.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluate import MarginReport
from .train import TrajectoryPoint

FIG_DPI = 130


def _finish(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)
    return path


def trajectory_figure(points: list[TrajectoryPoint], path) -> Path:
    steps = [p.step for p in points]
    fig, axes = plt.subplots(1, 3, figsize=(10.5, 3.2))
    axes[0].plot(steps, [p.loss for p in points], color="tab:blue")
    axes[0].set_xlabel("step")
    axes[0].set_ylabel("batch loss (nats)")
    axes[1].plot(steps, [p.beta_mean for p in points], color="tab:orange")
    axes[1].set_xlabel("step")
    axes[1].set_ylabel("strength mean")
    axes[2].plot(steps, [p.beta_variance for p in points], color="tab:green")
    axes[2].set_xlabel("step")
    axes[2].set_ylabel("strength variance")
    for ax in axes:
        ax.grid(alpha=0.3)
    return _finish(fig, path)


def margins_figure(report: MarginReport, path) -> Path:
    dims = sorted(report.macro_avg)
    n = max(len(dims), 1)
    fig, axes = plt.subplots(1, n, figsize=(3.0 * n, 3.4), squeeze=False)
    for ax, dim in zip(axes[0], dims):
        cells = sorted((cat, cnt, mean)
                       for (d, cat), (cnt, mean) in report.per_subgroup.items()
                       if d == dim)
        xs = range(len(cells))
        sizes = [20 + 60 * math.sqrt(c[1]) for c in cells]
        ax.scatter(xs, [c[2] for c in cells], s=sizes, color="tab:purple",
                   alpha=0.7, zorder=3)
        ax.axhline(report.micro_avg, color="tab:blue", lw=1.2, label="micro")
        ax.axhline(report.macro_avg[dim], color="tab:orange", lw=1.2, label="macro")
        ax.set_xticks(list(xs))
        ax.set_xticklabels([c[0] for c in cells], rotation=45, ha="right",
                           fontsize=7)
        ax.set_title(dim, fontsize=9)
        ax.grid(alpha=0.3)
    axes[0][0].set_ylabel("mean margin (nats)")
    axes[0][0].legend(fontsize=7)
    return _finish(fig, path)


def gains_figure(report: MarginReport, path) -> Path:
    if not report.margin_gain:
        raise ValueError("report has no margin_gain section")
    items = sorted(report.margin_gain["per_subgroup"].items())
    labels = [f"{d}:{c}" for (d, c), _ in items]
    values = [g for _, g in items]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.45 * len(items)), 3.4))
    ax.bar(range(len(items)), values, color="tab:green", alpha=0.8)
    ax.axhline(0.0, color="black", lw=0.8)
    ax.axhline(report.margin_gain["micro"], color="tab:blue", lw=1.2,
               ls="--", label="micro gain")
    ax.set_xticks(range(len(items)))
    ax.set_xticklabels(labels, rotation=60, ha="right", fontsize=6)
    ax.set_ylabel("margin gain vs baseline (nats)")
    ax.legend(fontsize=7)
    ax.grid(alpha=0.3, axis="y")
    return _finish(fig, path)


def runtime_figure(ratios: dict, path,
                   reference_points: dict | None = None) -> Path:
    names = list(ratios)
    means = [ratios[n]["ratio_mean"] for n in names]
    stds = [ratios[n]["ratio_std"] for n in names]
    fig, ax = plt.subplots(figsize=(4.2, 3.2))
    ax.bar(names, means, yerr=stds, capsize=4, color="tab:gray", alpha=0.8)
    ax.axhline(1.0, color="black", lw=0.8)
    if reference_points:
        for i, name in enumerate(names):
            if name in reference_points:
                ax.plot([i - 0.3, i + 0.3], [reference_points[name]] * 2,
                        color="tab:red", lw=1.4)
    ax.set_ylabel("runtime ratio vs dpo")
    ax.grid(alpha=0.3, axis="y")
    return _finish(fig, path)
