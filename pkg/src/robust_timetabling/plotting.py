"""Figures for run traces and evaluation reports, rendered to files."""
from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_bounds(traces: dict[str, list], path, title: str = "") -> Path:
    """Lower and upper bound per iteration, one colour per run.

    ``traces`` maps a run label to a list of trace rows (objects or dicts
    with ``k``, ``lb`` and ``ub``).
    """
    fig, ax = plt.subplots(figsize=(6, 4))
    for n, (label, rows) in enumerate(traces.items()):
        get = (lambda r, f: r[f]) if rows and isinstance(rows[0], dict) else getattr
        ks = [get(r, "k") for r in rows]
        colour = f"C{n}"
        for field, style in (("lb", "--"), ("ub", "-")):
            ys = [get(r, field) for r in rows]
            pts = [(k, y) for k, y in zip(ks, ys) if math.isfinite(y)]
            if pts:
                ax.plot(*zip(*pts), style, marker="o", ms=3, color=colour,
                        label=f"{label} {field}")
    ax.set_xlabel("iteration")
    ax.set_ylabel("travel time")
    if title:
        ax.set_title(title)
    ax.legend(fontsize="small")
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_delayed(reports, path, title: str = "") -> Path:
    """Per-scenario delayed travel times per algorithm with the nominal value marked."""
    fig, ax = plt.subplots(figsize=(6, 4))
    labels = [r.algorithm or f"run {i}" for i, r in enumerate(reports)]
    ax.boxplot([r.delayed for r in reports], widths=0.5)
    ax.set_xticks(range(1, len(labels) + 1), labels)
    for i, r in enumerate(reports, start=1):
        ax.scatter([i] * len(r.delayed), r.delayed, s=10, color="C0", alpha=0.6, zorder=3)
        ax.plot([i - 0.3, i + 0.3], [r.nominal] * 2, color="C3", lw=2,
                label="nominal" if i == 1 else None)
    ax.set_ylabel("minutes per trip")
    if title:
        ax.set_title(title)
    ax.legend(fontsize="small")
    ax.grid(axis="y", alpha=0.3)
    return _save(fig, path)


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


__all__ = ["plot_bounds", "plot_delayed"]
