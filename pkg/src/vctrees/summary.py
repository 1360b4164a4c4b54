"""Posterior summaries over one or more chains: surface means and pointwise
credible intervals, variable-selection diagnostics from the local scales and
split probabilities, and evaluation metrics against known truth.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gibbs import ChainOutput


class SummaryError(ValueError):
    """Raised when chains cannot be pooled or metrics cannot be computed."""


def _pooled_quantile(draws: np.ndarray, q, axis=0) -> np.ndarray:
    # linear interpolation between order statistics: position (n-1)*q
    return np.quantile(draws, q, axis=axis, method="linear")


@dataclass
class SummaryReport:
    """Pooled posterior summaries.

    beta_mean/lo/hi are (G, n_ens) over the query grid; lambda_median and
    theta_mean are selection diagnostics; the metric fields are populated
    when truth is supplied.
    """

    grid: np.ndarray
    beta_mean: np.ndarray
    beta_lo: np.ndarray
    beta_hi: np.ndarray
    lambda_median: np.ndarray          # (n_ens,)
    theta_mean: np.ndarray             # (n_ens, R)
    sigma2_mean: float
    n_draws: int
    n_chains: int
    mse: np.ndarray | None = None      # (n_ens,) vs true surfaces
    coverage: np.ndarray | None = None # (n_ens,) 95% interval coverage
    predictive_rmse: float | None = None
    predictive_coverage: float | None = None
    interval: tuple[float, float] = (0.025, 0.975)

    @property
    def n_ens(self) -> int:
        return self.beta_mean.shape[1]

    def save(self, out_dir, selection: dict | None = None) -> None:
        """Write summary.csv, selection.json and per-coefficient plot-data
        CSVs (grid, mean, lo, hi, truth-if-known)."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        n_ens = self.n_ens
        with open(out / "summary.csv", "w") as f:
            f.write("j,lambda_median,mse,coverage," +
                    ",".join(f"theta_mean_{r + 1}" for r in range(self.theta_mean.shape[1])) + "\n")
            for j in range(n_ens):
                mse = "" if self.mse is None else repr(float(self.mse[j]))
                cov = "" if self.coverage is None else repr(float(self.coverage[j]))
                f.write(
                    f"{j},{float(self.lambda_median[j])!r},{mse},{cov},"
                    + ",".join(repr(float(t)) for t in self.theta_mean[j]) + "\n"
                )
        if selection is not None:
            with open(out / "selection.json", "w") as f:
                json.dump(selection, f, indent=2, sort_keys=True)
        for j in range(n_ens):
            with open(out / f"plotdata_beta_{j}.csv", "w") as f:
                cols = [f"z_{r + 1}" for r in range(self.grid.shape[1])] + ["mean", "lo", "hi"]
                has_truth = getattr(self, "_truth", None) is not None
                if has_truth:
                    cols.append("truth")
                f.write(",".join(cols) + "\n")
                for g in range(self.grid.shape[0]):
                    row = list(self.grid[g]) + [self.beta_mean[g, j], self.beta_lo[g, j], self.beta_hi[g, j]]
                    if has_truth:
                        row.append(self._truth[g, j])
                    f.write(",".join(repr(float(v)) for v in row) + "\n")


def _check_chains(chains: list[ChainOutput]) -> None:
    if not chains:
        raise SummaryError("need at least one chain")
    first = chains[0]
    for c in chains[1:]:
        if c.grid.shape != first.grid.shape or not np.allclose(c.grid, first.grid):
            raise SummaryError("chains disagree on the query grid")
        if c.lam.shape[1] != first.lam.shape[1] or c.theta.shape[2] != first.theta.shape[2]:
            raise SummaryError("chains disagree on model shape")


def summarize(chains: list[ChainOutput], interval: tuple[float, float] = (0.025, 0.975)) -> SummaryReport:
    """Pool post-burn-in draws across chains and summarize.

    Quantiles use linear interpolation between order statistics, so pooled
    results are independent of chain order.
    """
    _check_chains(chains)
    lo_q, hi_q = interval
    if not 0.0 <= lo_q < hi_q <= 1.0:
        raise SummaryError(f"invalid interval {interval}")
    beta = np.concatenate([c.beta for c in chains], axis=0)
    lam = np.concatenate([c.lam for c in chains], axis=0)
    theta = np.concatenate([c.theta for c in chains], axis=0)
    sigma2 = np.concatenate([c.sigma2 for c in chains], axis=0)
    return SummaryReport(
        grid=chains[0].grid.copy(),
        beta_mean=beta.mean(axis=0),
        beta_lo=_pooled_quantile(beta, lo_q),
        beta_hi=_pooled_quantile(beta, hi_q),
        lambda_median=np.median(lam, axis=0),
        theta_mean=theta.mean(axis=0),
        sigma2_mean=float(sigma2.mean()),
        n_draws=int(sigma2.size),
        n_chains=len(chains),
        interval=interval,
    )


def coverage_and_mse(report: SummaryReport, truth: np.ndarray) -> SummaryReport:
    """Score a report against true surfaces on its grid.

    MSE_j averages (posterior mean - truth)^2 over grid points; coverage_j
    is the fraction of grid points whose credible interval contains the
    truth.  The report is updated in place and returned.
    """
    truth = np.atleast_2d(np.asarray(truth, dtype=np.float64))
    if truth.shape != report.beta_mean.shape:
        raise SummaryError(
            f"truth shape {truth.shape} does not match grid summary {report.beta_mean.shape}"
        )
    report.mse = np.mean((report.beta_mean - truth) ** 2, axis=0)
    inside = (report.beta_lo <= truth) & (truth <= report.beta_hi)
    report.coverage = inside.mean(axis=0)
    report._truth = truth
    return report


def predictive_metrics(report: SummaryReport, chains: list[ChainOutput], X: np.ndarray,
                       y: np.ndarray) -> SummaryReport:
    """Out-of-sample predictive RMSE and 95% predictive-interval coverage at
    the grid points (requires the covariates/response observed there)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] != report.grid.shape[0] or y.shape[0] != X.shape[0]:
        raise SummaryError("X, y rows must match the grid")
    design = np.hstack([np.ones((X.shape[0], 1)), X])
    beta = np.concatenate([c.beta for c in chains], axis=0)       # (K, G, n_ens)
    fits = np.einsum("kgj,gj->kg", beta, design)
    rng = np.random.default_rng(0)  # fixed: predictive noise is MC-integrated
    sigma2 = np.concatenate([c.sigma2 for c in chains], axis=0)
    k = min(beta.shape[0], sigma2.size)
    draws = fits[:k] + np.sqrt(sigma2[:k])[:, None] * rng.standard_normal((k, X.shape[0]))
    lo, hi = report.interval
    pred_lo = _pooled_quantile(draws, lo)
    pred_hi = _pooled_quantile(draws, hi)
    report.predictive_rmse = float(np.sqrt(np.mean((fits.mean(axis=0) - y) ** 2)))
    report.predictive_coverage = float(np.mean((pred_lo <= y) & (y <= pred_hi)))
    return report


def lambda_screen(report: SummaryReport, threshold: float | None = None,
                  min_ratio: float = 1.5) -> list[int]:
    """Covariates kept by thresholding posterior medians of the local scales.

    Fixed-threshold mode returns {j >= 1 : median(lambda_j) > threshold}.
    The default elbow rule sorts the medians and keeps the prefix before the
    largest consecutive ratio gap, requiring that gap to exceed
    ``min_ratio`` (equal medians select nothing).  The intercept (j = 0) is
    always in the model and never screened.
    """
    med = report.lambda_median[1:]
    if med.size == 0:
        return []
    if threshold is not None:
        return [int(j) + 1 for j in np.flatnonzero(med > threshold)]
    order = np.argsort(med)[::-1]
    sorted_med = med[order]
    if sorted_med.size == 1:
        return []
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = sorted_med[:-1] / sorted_med[1:]
    ratios = np.where(np.isfinite(ratios), ratios, np.inf)
    best = int(np.argmax(ratios))
    if not ratios[best] > min_ratio:
        return []
    return sorted(int(j) + 1 for j in order[: best + 1])


def modifier_report(chains: list[ChainOutput], j: int, mass: float = 0.9) -> dict:
    """Posterior mean split probabilities of ensemble j, sorted descending,
    with cumulative mass and the modifiers covering ``mass`` flagged."""
    _check_chains(chains)
    theta = np.concatenate([c.theta for c in chains], axis=0)[:, j, :]
    means = theta.mean(axis=0)
    order = np.argsort(means)[::-1]
    cum = np.cumsum(means[order])
    cutoff = int(np.searchsorted(cum, mass)) + 1
    return {
        "modifier": [int(r) + 1 for r in order],
        "theta_mean": [float(means[r]) for r in order],
        "cumulative": [float(c) for c in cum],
        "top_mass_modifiers": [int(r) + 1 for r in order[:cutoff]],
        "mass": mass,
    }
