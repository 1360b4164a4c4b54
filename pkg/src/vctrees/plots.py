"""Report figures rendered from posterior summaries.

Everything here consumes the same data that lands in the plot-data CSVs, so
figures and delimited output always agree.  Rendering uses the Agg backend
and writes PNG files next to the CSVs.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .summary import SummaryReport


def coefficient_figure(report: SummaryReport, j: int, path, truth: np.ndarray | None = None):
    """Posterior mean and interval of one coefficient surface, plotted
    against its most-used modifier (points sorted along that axis)."""
    axis = int(np.argmax(report.theta_mean[j]))
    x = report.grid[:, axis]
    order = np.argsort(x)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.fill_between(x[order], report.beta_lo[order, j], report.beta_hi[order, j],
                    alpha=0.3, color="tab:blue", label="95% interval")
    ax.plot(x[order], report.beta_mean[order, j], color="tab:blue", lw=1.5,
            label="posterior mean")
    if truth is not None:
        ax.plot(x[order], truth[order, j], color="black", lw=1.0, ls="--", label="truth")
    ax.set_xlabel(f"z_{axis + 1}")
    ax.set_ylabel(f"beta_{j}(z)")
    ax.set_title(f"coefficient {j} (vs modifier z_{axis + 1})")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def lambda_figure(report: SummaryReport, path, selected: list[int] | None = None):
    """Sorted posterior medians of the local scales (intercept excluded);
    the screening selection, when given, is highlighted."""
    med = report.lambda_median[1:]
    order = np.argsort(med)[::-1]
    labels = [f"x_{int(j) + 1}" for j in order]
    colors = ["tab:red" if (selected and int(j) + 1 in selected) else "tab:gray" for j in order]
    fig, ax = plt.subplots(figsize=(max(6.0, 0.25 * med.size), 4.0))
    ax.bar(np.arange(med.size), med[order], color=colors)
    ax.set_yscale("log")
    ax.set_xticks(np.arange(med.size))
    ax.set_xticklabels(labels, rotation=90, fontsize=7)
    ax.set_ylabel("posterior median local scale")
    ax.set_title("covariate screening by local shrinkage scales")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def theta_figure(report: SummaryReport, path):
    """Heatmap of posterior mean split probabilities (ensembles x modifiers)."""
    fig, ax = plt.subplots(figsize=(max(6.0, 0.22 * report.theta_mean.shape[1]),
                                    max(3.0, 0.22 * report.theta_mean.shape[0])))
    im = ax.imshow(report.theta_mean, aspect="auto", cmap="viridis")
    ax.set_xlabel("modifier")
    ax.set_ylabel("coefficient")
    ax.set_title("posterior mean split probabilities")
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_report_figures(report: SummaryReport, out_dir, selected: list[int] | None = None,
                          truth: np.ndarray | None = None, coefficients=None) -> list[str]:
    """Render the standard figure set; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if coefficients is None:
        coefficients = range(min(report.n_ens, 6))
    for j in coefficients:
        p = out / f"figure_beta_{j}.png"
        coefficient_figure(report, int(j), p, truth=truth)
        written.append(str(p))
    p = out / "figure_lambda.png"
    lambda_figure(report, p, selected=selected)
    written.append(str(p))
    p = out / "figure_theta.png"
    theta_figure(report, p)
    written.append(str(p))
    return written
