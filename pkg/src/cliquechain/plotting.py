"""Figures for the safety grid and scenario time series (written to files)."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import BoundaryNorm, ListedColormap  # noqa: E402

from .analysis import BANDS, GridCell  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.dpi": 120,
    "savefig.bbox": "tight",
}

# one colour per security level, worst first
BAND_COLOURS = ["#b2182b", "#ef8a62", "#fddbc7", "#d1e5f0", "#67a9cf", "#2166ac"]


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def safety_heatmap(cells: list[GridCell], path, title: str | None = None) -> Path:
    """Committee size against super-majority, coloured by years between capture slots."""
    Es = sorted({c.E for c in cells})
    Qs = sorted({c.Q for c in cells})
    levels = [lo for lo, _ in reversed(BANDS)]  # 0, 1, 10, ...
    grid = np.full((len(Qs), len(Es)), np.nan)
    for c in cells:
        y = c.years_between_events
        grid[Qs.index(c.Q), Es.index(c.E)] = sum(1 for lo in levels[1:] if y >= lo)
    cmap = ListedColormap(BAND_COLOURS)
    norm = BoundaryNorm(np.arange(-0.5, len(levels) + 0.5), cmap.N)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.4, 4.2))
        im = ax.imshow(grid, origin="lower", aspect="auto", cmap=cmap, norm=norm,
                       extent=(Es[0] - 0.5, Es[-1] + 0.5, float(Qs[0]), float(Qs[-1])))
        cb = fig.colorbar(im, ax=ax, ticks=range(len(levels)))
        cb.ax.set_yticklabels([name for _, name in reversed(BANDS)])
        cb.set_label("expected time between capture slots")
        ax.set_xlabel("committee size E")
        ax.set_ylabel("super-majority Q")
        beta = float(cells[0].beta) if cells else math.nan
        ax.set_title(title or f"attacker reaches Q*E endorsements, beta = {beta:.3g}")
        return _save(fig, path)


def scenario_series(series: list[dict], path, title: str = "") -> Path:
    """Share of slots finalized and clique count, per period."""
    periods = [r["period"] for r in series]
    with plt.rc_context(STYLE):
        fig, (top, bottom) = plt.subplots(2, 1, sharex=True, figsize=(6.4, 4.2))
        top.plot(periods, [float(r["liveness"]) for r in series], color="#2166ac", lw=1.0)
        top.set_ylabel("slots finalized")
        top.set_ylim(0, 1.05)
        top.grid(alpha=0.3)
        bottom.step(periods, [r["cliqueCount"] for r in series], where="post", color="#b2182b", lw=1.0)
        bottom.set_ylabel("cliques")
        bottom.set_xlabel("period")
        bottom.grid(alpha=0.3)
        if title:
            top.set_title(title)
        return _save(fig, path)


def verification_cost(ms: list[int], verifications: list[int], certified: list[int], path) -> Path:
    """Honest signature checks against attacker versions per slot."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.8, 3.4))
        ax.plot(ms, verifications, "o-", label="honest verifications")
        ax.plot(ms, certified, "s--", label="certified attacker blocks")
        ax.set_xscale("log")
        ax.set_yscale("symlog")
        ax.set_xlabel("versions per attacker slot (m)")
        ax.legend()
        ax.grid(alpha=0.3, which="both")
        return _save(fig, path)
