"""Matplotlib rendering for the CLI report path.

Every figure is written next to its CSV; the CSV stays the contract and
these renderings are a convenience.  The Agg backend keeps this usable in
headless runs.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

RESIDUAL_FLOOR = 1e-16


def render_trace_figure(path: str, traces: dict[str, list[tuple[int, float, float]]],
                        title: str) -> str:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label, rows in traces.items():
        ks = [r[0] for r in rows]
        res = [max(r[2], RESIDUAL_FLOOR) for r in rows]
        ax.semilogy(ks, res, label=label, linewidth=1.2)
    ax.set_xlabel("iteration")
    ax.set_ylabel("residual")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_sweep_figure(path: str, x_label: str,
                        series: dict[str, tuple[list[float], list[float]]],
                        title: str) -> str:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label, (xs, ys) in sorted(series.items()):
        ax.plot(xs, ys, marker="o", markersize=3.5, linewidth=1.2, label=label)
    ax.set_xlabel(x_label)
    ax.set_ylabel("average cost per slot")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_reduction_figure(path: str, labels: list[str],
                            groups: dict[str, list[float]], title: str) -> str:
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    width = 0.8 / max(len(groups), 1)
    for i, (name, vals) in enumerate(sorted(groups.items())):
        xs = [j + i * width for j in range(len(labels))]
        ax.bar(xs, vals, width=width, label=name)
    ax.set_xticks([j + width * (len(groups) - 1) / 2 for j in range(len(labels))])
    ax.set_xticklabels(labels)
    ax.set_xlabel("mean delay")
    ax.set_ylabel("cost reduction vs baseline (%)")
    ax.set_title(title)
    ax.grid(True, axis="y", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
