"""Figure rendering for CLI reports.

Every figure goes straight to a file through the Agg backend, so the
CLI works headless.  Figures accompany the delimited outputs: the fit
trace next to the fit report, the selection curve next to the CV table,
and the noise curve next to the sweep table.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def fit_trace_figure(trace, path, objective: str) -> None:
    """Plot an optimisation trace (avb per iteration, or elbo)."""
    trace = np.asarray(trace, dtype=float)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(np.arange(trace.size), trace, lw=1.5)
    ax.set_xlabel("outer iteration")
    ax.set_ylabel(objective)
    ax.set_title(f"{objective} trace")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cv_figure(rows, path) -> None:
    """Plot CV error per grid cell, one line per beta, lambda on the x axis.

    ``rows`` are dicts with keys lam, beta, cv_error.
    """
    betas = sorted({r["beta"] for r in rows})
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for beta in betas:
        cells = sorted((r for r in rows if r["beta"] == beta), key=lambda r: r["lam"])
        lams = [c["lam"] for c in cells]
        errs = [c["cv_error"] for c in cells]
        ax.plot(lams, errs, marker="o", label=f"beta={beta:g}")
    ax.set_xscale("log")
    ax.set_xlabel("lambda")
    ax.set_ylabel("CV misclassification rate")
    ax.set_title("cross-validation error")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def sweep_figure(levels, series, path) -> None:
    """Plot error against noise level, one line per solver.

    ``series`` maps a solver name to a list of error rates matching
    ``levels``.
    """
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for name, errs in series.items():
        ax.plot(levels, np.asarray(errs, dtype=float), marker="o", label=name)
    ax.set_xlabel("flip probability")
    ax.set_ylabel("misclassification rate vs truth")
    ax.set_title("error against switch-noise level")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
