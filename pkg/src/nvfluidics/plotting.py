"""SVG figures for the experiment recipes.

Figures are built on a bare :class:`matplotlib.figure.Figure` (no pyplot
state) and saved with a fixed hash salt and no date stamp, so the same data
always renders to the same bytes.
"""

from __future__ import annotations

from dataclasses import dataclass

import matplotlib
import numpy as np
from matplotlib.figure import Figure

KINDS = ("histogram", "path", "curve", "spectrum", "map")
MAX_BINS = 200  # a near-zero IQR would otherwise ask for millions of bins


class PlotError(RuntimeError):
    pass


@dataclass
class Series:
    """One data series. ``z`` is a (len(y), len(x)) surface for map plots."""

    x: np.ndarray
    y: np.ndarray | None = None
    label: str = ""
    yerr: np.ndarray | None = None
    z: np.ndarray | None = None
    style: str = "line"  # "line" or "points"


def fd_bin_edges(values) -> np.ndarray:
    """Histogram bin edges by the Freedman-Diaconis rule."""
    values = np.asarray(values, dtype=float)
    if values.size < 2 or np.ptp(values) == 0:
        return np.histogram_bin_edges(values, bins=1)
    q75, q25 = np.percentile(values, [75, 25])
    width = 2.0 * (q75 - q25) * values.size ** (-1.0 / 3.0)
    if width <= 0 or np.ptp(values) / width > MAX_BINS:
        return np.histogram_bin_edges(values, bins=MAX_BINS if width > 0 else "sturges")
    return np.histogram_bin_edges(values, bins="fd")


def _draw_histogram(ax, series):
    for s in series:
        x = np.asarray(s.x, dtype=float)
        if x.size == 0:
            continue
        edges = fd_bin_edges(x)
        counts, _, patches = ax.hist(x, bins=edges, alpha=0.5, label=f"{s.label} (n={x.size})")
        if x.size > 2 and np.std(x) > 0:
            mu, sd = np.mean(x), np.std(x, ddof=1)
            grid = np.linspace(edges[0], edges[-1], 200)
            width = edges[1] - edges[0]
            gauss = x.size * width * np.exp(-0.5 * ((grid - mu) / sd) ** 2) / (sd * np.sqrt(2 * np.pi))
            ax.plot(grid, gauss, color=patches[0].get_facecolor(), alpha=1.0,
                    label=f"Gaussian, sd = {sd:.3g}")


def _draw_xy(ax, series, equal=False):
    for s in series:
        x = np.asarray(s.x, dtype=float)
        y = np.asarray(s.y, dtype=float)
        if x.size == 0:
            continue
        if s.style == "points":
            if s.yerr is not None:
                ax.errorbar(x, y, yerr=s.yerr, fmt="o", ms=4, capsize=2, label=s.label)
            else:
                ax.plot(x, y, "o", ms=4, label=s.label)
        else:
            ax.plot(x, y, "-", lw=1.2, label=s.label)
    if equal:
        ax.set_aspect("equal", adjustable="datalim")


def _draw_map(fig, ax, series):
    for s in series:
        if s.z is not None:
            # embedded raster keeps large surfaces small; axes and labels stay vector
            x, y = np.asarray(s.x, dtype=float), np.asarray(s.y, dtype=float)
            lim = float(np.nanpercentile(np.abs(s.z), 98)) or 1.0  # near-field peak would wash out the rest
            img = ax.imshow(s.z, origin="lower", extent=(x[0], x[-1], y[0], y[-1]), cmap="RdBu_r",
                            vmin=-lim, vmax=lim, interpolation="nearest")
            fig.colorbar(img, ax=ax, label=s.label)
        elif np.size(s.x):
            ax.plot(s.x, s.y, "o", mfc="none", mec="k", ms=6, label=s.label)
    ax.set_aspect("equal", adjustable="box")


def emit_plot(series, kind: str, path, xlabel: str = "", ylabel: str = "", title: str = "") -> None:
    """Render ``series`` as an SVG file at ``path``.

    An empty series list gives a valid figure with labelled axes only.
    Raises PlotError when the file cannot be written.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; expected one of {', '.join(KINDS)}")
    series = list(series)
    fig = Figure(figsize=(6.0, 4.5))
    ax = fig.add_subplot()
    if kind == "histogram":
        _draw_histogram(ax, series)
        ylabel = ylabel or "counts"
    elif kind == "map":
        _draw_map(fig, ax, series)
    else:
        _draw_xy(ax, series, equal=kind == "path")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if any(s.label for s in series) and ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize="small")
    fig.tight_layout()
    with matplotlib.rc_context({"svg.hashsalt": "nvfluidics", "svg.fonttype": "path"}):
        try:
            fig.savefig(path, format="svg", metadata={"Date": None})
        except OSError as exc:
            raise PlotError(f"cannot write plot {path}: {exc.strerror or exc}") from exc
