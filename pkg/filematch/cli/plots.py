"""Static SVG box plots of experiment results.

Figures are rendered off-screen and written as self-contained SVG. The hash salt and
the date metadata are fixed so that the same results always produce the same file.
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import List, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from filematch.models.schemas import (  # noqa: E402
    BenchmarkResult,
    BICExperimentResult,
    IdentifiabilityResult,
)

log = logging.getLogger(__name__)

matplotlib.rcParams["svg.hashsalt"] = "filematch"
matplotlib.rcParams["svg.fonttype"] = "none"


def _boxes(ax, groups: Sequence[np.ndarray], labels: Sequence[str], ylabel: str) -> None:
    positions = [i + 1 for i, values in enumerate(groups) if values.size]
    data = [values for values in groups if values.size]
    if data:
        ax.boxplot(data, positions=positions, widths=0.6)
    else:
        ax.text(0.5, 0.5, "no successful runs", ha="center", transform=ax.transAxes)
    ax.set_xticks(range(1, len(labels) + 1))
    ax.set_xticklabels(labels)
    ax.set_xlim(0.4, len(labels) + 0.6)
    ax.set_ylabel(ylabel)


def _save(fig, path: Union[str, Path]) -> None:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    log.info("Plot written to %s.", path)


def plot_identifiability(result: IdentifiabilityResult, path: Union[str, Path]) -> None:
    """One panel per error metric, one box per q."""
    q_values = sorted({r.q for r in result.records})
    labels = [f"q={q}" for q in q_values]
    fig, (ax_yz, ax_obs) = plt.subplots(1, 2, figsize=(9, 4))
    for ax, field, ylabel in (
        (ax_yz, "mse_yz", "MSE of Sigma_YZ"),
        (ax_obs, "mse_observed", "MSE of observed blocks"),
    ):
        groups: List[np.ndarray] = []
        for q in q_values:
            values = [getattr(r, field) for r in result.panel(q)]
            groups.append(np.array([v for v in values if v is not None], dtype=float))
        _boxes(ax, groups, labels, ylabel)
    _save(fig, path)


def plot_benchmark(result: BenchmarkResult, path: Union[str, Path]) -> None:
    """One box of mse_yz per method, in the order the methods were run."""
    labels = [str(method) for method in result.methods]
    groups = [result.errors(method) for method in result.methods]
    fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(labels)), 4))
    _boxes(ax, groups, labels, "MSE of Sigma_YZ")
    _save(fig, path)


def plot_bic(result: BICExperimentResult, path: Union[str, Path]) -> None:
    """
    Errors of the file-matching fit for every q next to the conditional-independence
    estimate, and how often BIC picked each q.
    """
    labels = ["cia"] + [f"q={q}" for q in result.q_values]
    columns: List[List[Optional[float]]] = [[r.mse_cia for r in result.replicates]]
    columns += [[r.mse_by_q.get(q) for r in result.replicates] for q in result.q_values]
    groups = [np.array([v for v in values if v is not None], dtype=float) for values in columns]

    counts = result.selection_counts()
    fig, (ax_mse, ax_sel) = plt.subplots(1, 2, figsize=(10, 4))
    _boxes(ax_mse, groups, labels, "MSE of Sigma_YZ")
    ax_sel.bar([str(q) for q in result.q_values], [counts.get(q, 0) for q in result.q_values])
    ax_sel.set_xlabel("q")
    ax_sel.set_ylabel("replicates selecting q")
    _save(fig, path)
