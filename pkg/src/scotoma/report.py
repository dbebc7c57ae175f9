"""Figure rendering for simulation outputs.

Renders matplotlib figures to files next to the delimited results so a
simulation run leaves a self-contained report directory.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .simlab import ExperimentResult, quadratic_gain_fit


def save_accuracy_boxplot(result: ExperimentResult, path,
                          title: str = "Matching accuracy") -> None:
    """One box per (cell, method) of per-replicate matching accuracy."""
    cells = sorted({r["cell"] for r in result.records})
    methods = sorted({r["method"] for r in result.records})
    data, labels = [], []
    for cell in cells:
        for method in methods:
            acc = result.accuracies(cell, method)
            if acc.size:
                data.append(acc)
                labels.append(f"{method}\ncell {cell}" if len(cells) > 1 else method)
    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(data)), 4.5))
    ax.boxplot(data, tick_labels=labels)
    ax.set_ylabel("matching accuracy")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_gain_scatter(pairs, path,
                      title: str = "Self-taught gain vs initial accuracy") -> None:
    """Scatter of accuracy gain against initial accuracy with the fitted
    quadratic overlaid."""
    arr = np.asarray(pairs, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.scatter(arr[:, 0], arr[:, 1], s=18, alpha=0.7)
    if len(arr) >= 3 and np.ptp(arr[:, 0]) > 0:
        coeffs = quadratic_gain_fit(arr)
        xs = np.linspace(arr[:, 0].min(), arr[:, 0].max(), 100)
        ax.plot(xs, np.polyval(coeffs, xs), color="tab:blue")
    ax.axhline(0.0, color="grey", lw=0.8)
    ax.set_xlabel("initial accuracy")
    ax.set_ylabel("accuracy gain")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_random_table_plot(rows, path) -> None:
    """Mean accuracy and P(no correct) against the number of pairs."""
    ns = [r["n_pairs"] for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    ax1.plot(ns, [r["mean_accuracy"] for r in rows], "o-")
    ax1.plot(ns, [1 / n for n in ns], "--", color="grey", label="1/n")
    ax1.set_xlabel("number of pairs")
    ax1.set_ylabel("mean accuracy")
    ax1.legend()
    ax2.plot(ns, [r["prob_no_correct"] for r in rows], "o-")
    ax2.plot(ns, [(1 - 1 / n) ** n for n in ns], "--", color="grey",
             label="(1-1/n)^n")
    ax2.set_xlabel("number of pairs")
    ax2.set_ylabel("P(no correct match)")
    ax2.legend()
    fig.suptitle("Random matching reference")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
