"""Figures for the CLI reports, written to files with the Agg backend."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_roc(curves: dict, path, title: str = "Edge recovery") -> Path:
    """ROC curves keyed by label, each an array of (fpr, tpr) rows."""
    fig, ax = plt.subplots(figsize=(5, 5))
    for label, pts in curves.items():
        pts = np.asarray(pts)
        ax.plot(pts[:, 0], pts[:, 1], label=label)
    ax.plot([0, 1], [0, 1], color="0.7", lw=0.8, ls="--")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title(title)
    ax.legend(loc="lower right", fontsize=8)
    return _save(fig, path)


def plot_loss(histories: dict, path, log_scale: bool = True) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, h in histories.items():
        ax.plot(np.arange(1, len(h) + 1), h, label=label)
    if log_scale:
        ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss (MSE)")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_likelihood_grid(w_grid, log_likelihoods, path, best: float | None = None) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogx(w_grid, log_likelihoods, marker="o")
    if best is not None:
        ax.axvline(best, color="C3", ls="--", lw=1)
    ax.set_xlabel("kernel decay w")
    ax.set_ylabel("log-likelihood")
    return _save(fig, path)


def plot_precision_matrix(beta, path, title: str = "") -> Path:
    """Heat map of hit rates, delays down the rows and thresholds across."""
    beta = np.asarray(beta, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(1.2 * beta.shape[1] + 2, 0.8 * beta.shape[0] + 1.5))
    im = ax.imshow(np.ma.masked_invalid(beta), vmin=0, vmax=1, cmap="viridis", aspect="auto")
    for (d, i), b in np.ndenumerate(beta):
        ax.text(i, d, "NA" if np.isnan(b) else f"{b:.2f}", ha="center", va="center",
                color="w" if np.isnan(b) or b < 0.6 else "k", fontsize=8)
    ax.set_xticks(range(beta.shape[1]), [str(i + 1) for i in range(beta.shape[1])])
    ax.set_yticks(range(beta.shape[0]), [str(d) for d in range(beta.shape[0])])
    ax.set_xlabel("threshold (events)")
    ax.set_ylabel("allowed delay (slots)")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax)
    return _save(fig, path)


def plot_spectrum(frequency, power, path, period_marks=(24.0,)) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(frequency, np.maximum(power, 1e-300))
    for p in period_marks:
        ax.axvline(1.0 / p, color="C3", ls="--", lw=0.8)
    ax.set_xlabel("frequency (cycles per slot)")
    ax.set_ylabel("power")
    return _save(fig, path)


def plot_forecast(hours, actual, predicted, path, label: str = "predicted", scale: str = "pdf") -> Path:
    fig, ax = plt.subplots(figsize=(9, 3))
    ax.plot(hours, actual, color="k", lw=1, label="actual")
    ax.plot(hours, predicted, color="C1", lw=1, label=label)
    ax.set_xlabel("hour")
    ax.set_ylabel("events per slot" if scale == "pdf" else "events since midnight")
    ax.legend(fontsize=8)
    return _save(fig, path)
