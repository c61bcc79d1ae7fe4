"""Report figures, rendered off-screen to PNG files."""

from __future__ import annotations

import os
from typing import List, Sequence

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .labels import REGIONS
from .metrics import EvalReport

__all__ = ["STYLE", "plot_evaluation", "plot_intensity_histograms"]

STYLE = {
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.titlesize": 11,
    "axes.labelsize": 10,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "legend.fontsize": 8,
    "savefig.dpi": 120,
}
REGION_COLORS = {"ET": "#d62728", "TC": "#ff7f0e", "WT": "#1f77b4"}


def _new_figure(width: float = 7.0, height: float = 3.2) -> Figure:
    import matplotlib

    with matplotlib.rc_context(STYLE):
        fig = Figure(figsize=(width, height))
    FigureCanvasAgg(fig)
    return fig


def _save(fig: Figure, path: str) -> str:
    import matplotlib

    with matplotlib.rc_context(STYLE):
        # fixed metadata keeps the PNG bytes reproducible
        fig.savefig(path, metadata={"Software": None})
    return path


def _grouped_bars(ax, reports: Sequence[EvalReport], attr: str) -> None:
    n = len(reports)
    x = np.arange(n)
    width = 0.8 / len(REGIONS)
    for k, region in enumerate(REGIONS):
        vals = [getattr(r.regions[region], attr) for r in reports]
        ax.bar(x + (k - 1) * width, vals, width, label=region, color=REGION_COLORS[region])
    ax.set_xticks(x)
    ax.set_xticklabels([r.subject for r in reports], rotation=45 if n > 6 else 0, ha="right" if n > 6 else "center")


def plot_evaluation(reports: Sequence[EvalReport], out_dir: str) -> List[str]:
    """Per-subject lesion-wise Dice and HD95 bars, one PNG per metric."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for attr, label, fname in (
        ("lesion_dice", "lesion-wise Dice", "lesion_dice.png"),
        ("lesion_hd95", "lesion-wise HD95 (mm)", "lesion_hd95.png"),
    ):
        fig = _new_figure(max(4.0, 1.0 + 0.6 * len(reports)))
        ax = fig.add_subplot(111)
        _grouped_bars(ax, reports, attr)
        ax.set_ylabel(label)
        if attr == "lesion_dice":
            ax.set_ylim(0, 1.05)
        ax.legend(ncol=3, frameon=False)
        fig.tight_layout()
        written.append(_save(fig, os.path.join(out_dir, fname)))
    return written


def plot_intensity_histograms(before: np.ndarray, after: np.ndarray, path: str, title: str = "") -> str:
    """Side-by-side histograms of brain intensities before and after pre-processing."""
    fig = _new_figure()
    for i, (vals, name) in enumerate(((before, "input"), (after, "processed")), start=1):
        ax = fig.add_subplot(1, 2, i)
        ax.hist(np.asarray(vals, dtype=np.float64).ravel(), bins=64, color="0.35")
        ax.set_title(name)
        ax.set_xlabel("intensity")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return _save(fig, path)
