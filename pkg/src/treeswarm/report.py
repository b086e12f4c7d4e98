"""Figure rendering and aggregation over sweep results.

Reads the sweep CSV, writes per-cell medians to a summary CSV and renders
box-plot figures (mission time, connectivity loss) to files next to it.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

_GROUP = ["variant", "targets", "radius", "redundancy", "los"]


def load_results(path: str | Path) -> pd.DataFrame:
    df = pd.read_csv(path, na_values=["DNF", ""])
    df = df[df["status"] == "OK"].copy()
    return df


def summarize_cells(df: pd.DataFrame) -> pd.DataFrame:
    def agg(cell: pd.DataFrame) -> pd.Series:
        return pd.Series({
            "runs": len(cell),
            "dnf": int((cell["completed"] == 0).sum()),
            "median_normalized_time": cell["normalized_time"].median(),
            "median_disconnected_ratio": cell["disconnected_time_ratio"].median(),
            "median_fiedler_low_ratio": cell["fiedler_low_ratio"].median(),
        })
    out = df.groupby(_GROUP).apply(agg, include_groups=False).reset_index()
    return out.sort_values(_GROUP).reset_index(drop=True)


def _boxplot_panel(ax, df: pd.DataFrame, value: str, radius: float) -> None:
    cell = df[df["radius"] == radius]
    labels, series = [], []
    for variant in sorted(cell["variant"].unique()):
        for red in sorted(cell["redundancy"].unique()):
            sel = cell[(cell["variant"] == variant) & (cell["redundancy"] == red)]
            vals = sel[value].dropna().to_numpy()
            if len(vals) == 0:
                continue
            labels.append(f"{variant[:3]}\nx{red}")
            series.append(vals)
    if series:
        ax.boxplot(series, tick_labels=labels)
    ax.set_title(f"radius {radius:g} m")
    ax.grid(True, alpha=0.3)


def render_figures(df: pd.DataFrame, outdir: str | Path) -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    radii = sorted(df["radius"].unique())
    written = []
    for value, fname, ylabel in [
        ("normalized_time", "mission_time.png", "normalized mission time"),
        ("disconnected_time_ratio", "disconnected_time.png", "broken tree-edge time ratio"),
        ("fiedler_low_ratio", "fiedler_low.png", "low-connectivity time ratio"),
    ]:
        fig, axes = plt.subplots(1, max(1, len(radii)), figsize=(4 * max(1, len(radii)), 3.6),
                                 squeeze=False, sharey=True)
        for ax, radius in zip(axes[0], radii):
            _boxplot_panel(ax, df, value, radius)
        axes[0][0].set_ylabel(ylabel)
        fig.tight_layout()
        path = outdir / fname
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)
    return written


def report(results_csv: str | Path, outdir: str | Path) -> list[Path]:
    df = load_results(results_csv)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    summary = summarize_cells(df)
    summary_path = outdir / "summary.csv"
    summary.to_csv(summary_path, index=False)
    written = [summary_path]
    written += render_figures(df, outdir)
    return written
