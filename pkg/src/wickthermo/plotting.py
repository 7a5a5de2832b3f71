"""Figures for scenario reports, rendered off-screen to PNG files."""
from __future__ import annotations

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

__all__ = ["plot_sweep", "plot_estimates", "plot_curvature", "plot_convergence"]

_PNG_META = {"Software": None}


def _save(fig, path):
    FigureCanvasAgg(fig)
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    return str(path)


def plot_sweep(path, betas, w, w_error=None, temperature=None, title=""):
    """Wick square and local temperature against ``beta`` on log axes."""
    fig = Figure(figsize=(8.0, 3.4), layout="constrained")
    ax1, ax2 = fig.subplots(1, 2)
    betas = np.asarray(betas, float)
    w = np.asarray(w, float)
    if w_error is not None and np.any(np.asarray(w_error) > 0):
        ax1.errorbar(betas, w, yerr=w_error, fmt="o-", ms=3, lw=1)
    else:
        ax1.plot(betas, w, "o-", ms=3, lw=1)
    ax1.set_xscale("log")
    if np.all(w > 0):
        ax1.set_yscale("log")
    ax1.set_xlabel(r"$\beta$")
    ax1.set_ylabel(r"$w$")
    ax1.grid(alpha=0.3)
    if temperature is not None:
        t = np.array([np.nan if v is None else v for v in temperature], float)
        ax2.plot(betas, t, "s-", ms=3, lw=1, color="C1", label=r"$T=\sqrt{12w}$")
        ax2.plot(betas, 1.0 / betas, ":", color="0.4", label=r"$1/\beta$")
        ax2.set_xscale("log")
        ax2.set_yscale("log")
        ax2.legend(frameon=False)
    ax2.set_xlabel(r"$\beta$")
    ax2.set_ylabel("local temperature")
    ax2.grid(alpha=0.3)
    if title:
        fig.suptitle(title)
    return _save(fig, path)


def plot_estimates(path, labels, values, errors, title="", reference=0.0):
    """Point estimates with error bars, one per label."""
    fig = Figure(figsize=(max(4.0, 0.9 * len(labels) + 2.0), 3.4), layout="constrained")
    ax = fig.subplots()
    x = np.arange(len(labels))
    ax.errorbar(x, values, yerr=errors, fmt="o", capsize=4)
    ax.axhline(reference, color="0.4", lw=0.8, ls="--")
    ax.set_xticks(x, labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel(r"$w$ at the centre")
    ax.grid(alpha=0.3, axis="y")
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_curvature(path, r, R, title="", shell=None):
    fig = Figure(figsize=(5.0, 3.2), layout="constrained")
    ax = fig.subplots()
    ax.plot(r, R, lw=1.2)
    if shell is not None:
        ax.axvspan(shell[0], shell[1], color="0.85", zorder=0)
    ax.axhline(0.0, color="0.4", lw=0.8)
    ax.set_xlabel("r")
    ax.set_ylabel("scalar curvature R")
    ax.grid(alpha=0.3)
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_convergence(path, x, series: dict, xlabel="", ylabel="", title="", loglog=True):
    fig = Figure(figsize=(5.0, 3.4), layout="constrained")
    ax = fig.subplots()
    for label, y in series.items():
        ax.plot(x, y, "o-", ms=3, label=label)
    if loglog:
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(frameon=False)
    ax.grid(alpha=0.3)
    if title:
        ax.set_title(title)
    return _save(fig, path)
