# Thin SVG plotter for the CLI reports. Figures are built without pyplot so worker threads never share state.

import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

from matplotlib.figure import Figure  # noqa: E402

logger = logging.getLogger(__name__)

_SVG_RC = {"svg.hashsalt": "keypose", "svg.fonttype": "none"}


def _save(fig: Figure, path: str | Path) -> None:
    with matplotlib.rc_context(_SVG_RC):
        fig.savefig(path, format="svg", metadata={"Date": None})
    logger.debug("Wrote %s", path)


def histogram_svg(values, path: str | Path, title: str, xlabel: str, bins: int = 30) -> None:
    fig = Figure(figsize=(5.0, 3.5))
    ax = fig.add_subplot()
    ax.hist(values, bins=bins, color="#3b6ea5", edgecolor="white")
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("count")
    fig.tight_layout()
    _save(fig, path)


def line_svg(x, series: dict, path: str | Path, title: str, xlabel: str, ylabel: str) -> None:
    """One line per entry of ``series`` against the shared ``x``."""
    fig = Figure(figsize=(6.0, 3.5))
    ax = fig.add_subplot()
    for label, y in series.items():
        ax.plot(x, y, label=label, linewidth=1.0)
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if len(series) > 1:
        ax.legend(fontsize="small")
    fig.tight_layout()
    _save(fig, path)


def heightmap_svg(heights, extent, path: str | Path, title: str) -> None:
    """Top view of a height grid indexed ``[ix, iy]``; ``extent`` is (xmin, xmax, ymin, ymax)."""
    fig = Figure(figsize=(4.5, 4.0))
    ax = fig.add_subplot()
    image = ax.imshow(heights.T, origin="lower", extent=extent, cmap="terrain")
    fig.colorbar(image, ax=ax, label="height [m]")
    ax.set_title(title)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    fig.tight_layout()
    _save(fig, path)


def bar_svg(labels, values, path: str | Path, title: str, ylabel: str) -> None:
    fig = Figure(figsize=(5.0, 3.5))
    ax = fig.add_subplot()
    ax.bar(list(labels), values, color="#3b6ea5")
    ax.set_title(title)
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    _save(fig, path)
