"""Figure rendering for the experiment driver (opt-in).

Each function takes the same row dictionaries the driver writes to
its delimited outputs and renders a single PNG next to them. Uses the
Agg backend so runs stay headless.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_RATE_SERIES = (
    ("R_g", "R_g_err", "global greedy"),
    ("R_loc", "R_loc_err", "local rule"),
    ("R_optUB", "R_optUB_err", "optimal upper bound"),
    ("R_lin", None, "linear chain"),
)


def plot_rate_vs_distance(rows: Sequence[Mapping], path: str) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    ns = [row["n"] for row in rows]
    for key, err_key, label in _RATE_SERIES:
        vals = np.array([row[key] for row in rows], dtype=float)
        mask = vals > 0
        if not mask.any():
            continue
        if err_key is None:
            ax.semilogy(np.array(ns)[mask], vals[mask], "--", label=label)
        else:
            errs = np.array([row[err_key] for row in rows], dtype=float)
            ax.errorbar(np.array(ns)[mask], vals[mask], yerr=errs[mask],
                        marker="o", ms=3, capsize=2, label=label)
    ax.set_yscale("log")
    ax.set_xlabel("separation n")
    ax.set_ylabel("rate (ebits per slot)")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_rate_region(rows: Sequence[Mapping],
                     frontier: Sequence[tuple[float, float]],
                     path: str) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 5.0))
    by_strategy: dict[str, list[Mapping]] = {}
    for row in rows:
        by_strategy.setdefault(str(row["strategy"]), []).append(row)
    for name, group in by_strategy.items():
        r1 = [g["R1"] for g in group]
        r2 = [g["R2"] for g in group]
        ax.plot(r1, r2, "o-", ms=4, label=name)
    if frontier:
        fx, fy = zip(*frontier)
        ax.plot(fx, fy, "k--", lw=1, label="time-share frontier")
    ax.set_xlabel("R1 (ebits per slot)")
    ax.set_ylabel("R2 (ebits per slot)")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_heatmap(rows: Sequence[Mapping], path: str) -> None:
    xs = np.array([row["x"] for row in rows], dtype=int)
    ys = np.array([row["y"] for row in rows], dtype=int)
    usage = np.array([row["p_usage"] for row in rows], dtype=float)
    grid = np.full((ys.max() + 1, xs.max() + 1), np.nan)
    grid[ys, xs] = usage
    fig, ax = plt.subplots(figsize=(6.0, 5.0))
    im = ax.imshow(grid, origin="lower", cmap="inferno")
    fig.colorbar(im, ax=ax, label="p_usage")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_scaling(points: Sequence[Mapping], fit: Mapping, path: str) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    ns = np.array([pt["n"] for pt in points], dtype=float)
    means = np.array([pt["mean"] for pt in points], dtype=float)
    errs = np.array([pt["stderr"] for pt in points], dtype=float)
    ax.errorbar(ns, means, yerr=errs, fmt="o", ms=4, capsize=2, label="measured")
    span = np.linspace(ns.min(), ns.max(), 64)
    f, g = fit["decay_base"], fit["prefactor"]
    ax.semilogy(span, g * f**span, "-",
                label=f"fit {g:.3g} * {f:.4g}^n")
    ax.set_yscale("log")
    ax.set_xlabel("separation n")
    ax.set_ylabel("rate (ebits per slot)")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
