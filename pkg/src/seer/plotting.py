"""Figures written next to the CSV/JSON reports."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .citysim import CATEGORIES, AccessPoint, DensityGrid, Poi  # noqa: E402
from .control import OrderMetrics  # noqa: E402
from .knowstore import MarkovModel  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "svg.hashsalt": "seer",
}

MARKERS = dict(zip(CATEGORIES, "s^P*"))


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    # strip timestamps so repeated runs write identical files
    metadata = {"Software": None} if path.suffix == ".png" else {"Date": None}
    fig.savefig(path, bbox_inches="tight", metadata=metadata)
    plt.close(fig)
    return path


def plot_density(
    grid: DensityGrid,
    path: str | Path,
    pois: Sequence[Poi] = (),
    aps: Sequence[AccessPoint] = (),
) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.5, 4.8))
        ny, nx = grid.values.shape
        x0, y0 = grid.origin
        extent = (x0, x0 + nx * grid.cell_size, y0, y0 + ny * grid.cell_size)
        im = ax.imshow(grid.values, origin="lower", extent=extent, cmap="viridis", aspect="equal")
        fig.colorbar(im, ax=ax, label="density (1/m²)", shrink=0.85)
        for cat in CATEGORIES:
            pts = [(p.x, p.y) for p in pois if p.category == cat]
            if pts:
                xs, ys = zip(*pts)
                ax.scatter(xs, ys, s=10, marker=MARKERS[cat], c="white", edgecolors="k", linewidths=0.3, label=cat)
        if aps:
            ax.scatter([a.x for a in aps], [a.y for a in aps], s=3, c="tab:red", label="AP")
        if pois or aps:
            ax.legend(loc="upper right", framealpha=0.8)
        ax.set_xlabel("x (m)")
        ax.set_ylabel("y (m)")
        ax.set_title("commercial density")
        return _save(fig, path)


def plot_hit_rates(metrics: dict[int, OrderMetrics], path: str | Path) -> Path:
    orders = sorted(metrics)
    rates = [metrics[k].hit_rate for k in orders]
    states = [metrics[k].states for k in orders]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 3.2))
        bars = ax.bar([str(k) for k in orders], rates, color="tab:blue", width=0.6)
        for bar, n in zip(bars, states):
            ax.annotate(
                f"{n} states",
                (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                ha="center",
                va="bottom",
                fontsize=7,
                xytext=(0, 2),
                textcoords="offset points",
            )
        ax.set_ylim(0, 1.1)
        ax.set_xlabel("chain order")
        ax.set_ylabel("hit rate")
        ax.set_title("pre-allocation hit rate")
        return _save(fig, path)


def plot_transitions(model: MarkovModel, path: str | Path, top: int = 12) -> Path:
    """Order-1 transition probabilities between the ``top`` busiest APs."""
    table = model.tables[1]
    volume: dict[str, int] = {}
    for (ap,), dests in table.items():
        volume[ap] = volume.get(ap, 0) + sum(dests.values())
    busiest = sorted(volume, key=lambda a: (-volume[a], a))[:top]
    busiest.sort()
    pos = {a: i for i, a in enumerate(busiest)}
    mat = np.zeros((len(busiest), len(busiest)))
    for ap in busiest:
        dests = table.get((ap,), {})
        total = sum(dests.values())
        for to, c in dests.items():
            if to in pos and total:
                mat[pos[ap], pos[to]] = c / total
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 4.4))
        im = ax.imshow(mat, cmap="magma", vmin=0, vmax=1)
        ax.set_xticks(range(len(busiest)), busiest, rotation=90)
        ax.set_yticks(range(len(busiest)), busiest)
        ax.set_xlabel("to")
        ax.set_ylabel("from")
        ax.set_title("order-1 transition probability")
        fig.colorbar(im, ax=ax, shrink=0.85)
        return _save(fig, path)
