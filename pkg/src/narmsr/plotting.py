"""Report figures. Uses ``Figure`` objects directly so no pyplot state or
interactive backend is involved."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

STYLE = {"figsize": (6.0, 4.0), "dpi": 120}


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    FigureCanvasAgg(fig)
    fig.savefig(path, bbox_inches="tight")
    return path


def plot_stage_curves(histories: dict[str, list[dict]], key: str, ylabel: str, path, mean: bool = True) -> Path:
    """One line per image of ``history[key]`` against stage, plus the mean."""
    fig = Figure(figsize=STYLE["figsize"], dpi=STYLE["dpi"])
    ax = fig.add_subplot()
    curves = []
    for name, hist in sorted(histories.items()):
        pts = [(h["stage"], h[key]) for h in hist if h.get(key) is not None]
        if not pts:
            continue
        stages, vals = zip(*pts)
        ax.plot(stages, vals, color="0.7", linewidth=0.8)
        curves.append(vals)
    if mean and curves and len({len(c) for c in curves}) == 1:
        ax.plot(stages, np.mean(curves, axis=0), color="C0", linewidth=2.0, marker="o", label="mean")
        ax.legend(frameon=False)
    ax.set_xlabel("stage")
    ax.set_ylabel(ylabel)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_gain_bars(names: list[str], gains: list[float], path, threshold: float | None = None) -> Path:
    """Per-image PSNR gain of the final stage over the initialization."""
    fig = Figure(figsize=(max(4.0, 0.5 * len(names) + 1.5), 3.5), dpi=STYLE["dpi"])
    ax = fig.add_subplot()
    colors = ["C2" if g >= 0 else "C3" for g in gains]
    ax.bar(range(len(names)), gains, color=colors)
    ax.set_xticks(range(len(names)), names, rotation=45, ha="right")
    ax.axhline(0.0, color="k", linewidth=0.8)
    if threshold is not None:
        ax.axhline(threshold, color="C1", linestyle="--", linewidth=1.0)
    ax.set_ylabel("PSNR gain over init (dB)")
    return _save(fig, path)
