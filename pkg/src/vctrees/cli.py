"""Batch command-line front end: simulate, fit, summarize, and the
replication experiment pipelines.

Exit codes are a stable contract: 0 success, 2 configuration error,
3 data error, 4 numerical abort.  A JSON config file passed with --config
overrides command-line flags; the only environment variable honored is
VCTREES_WORKERS (default worker count for parallel chains).
"""
from __future__ import annotations

import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import __version__
from .datagen import DataError, Dataset, generate, load_csv, make_spec, save_csv
from .gibbs import ChainError, ChainOutput, run_chain
from .priors import ConfigurationError, Hyperparameters
from .samplers import RngStream, SliceError
from .summary import SummaryError, coverage_and_mse, lambda_screen, modifier_report, predictive_metrics, summarize

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _wrap_errors(fn):
    def inner(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigurationError, SummaryError) as exc:
            _fail(EXIT_CONFIG, str(exc))
        except DataError as exc:
            _fail(EXIT_DATA, str(exc))
        except (ChainError, SliceError) as exc:
            _fail(EXIT_NUMERIC, str(exc))

    inner.__name__ = fn.__name__
    inner.__doc__ = fn.__doc__
    return inner


def _default_workers(chains: int) -> int:
    env = os.environ.get("VCTREES_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigurationError(f"VCTREES_WORKERS must be an integer, got {env!r}") from None
    return max(1, min(chains, os.cpu_count() or 1))


_HYPER_FLAG_KEYS = (
    "m_trees", "nu", "noise_scale", "nu_c", "s_c", "tau0", "chains", "iters",
    "burn", "thin", "beta_thin", "cutpoint_mode", "c2_update", "shrinkage",
    "leaf_variance", "eta_step", "slice_width", "slice_max_stepout",
)


def _build_hyper(flags: dict, config_path, seed: int | None = None):
    """Assemble hyperparameters: defaults < flags < config file.  Returns
    (hyper, seed); a "seed" key in the config file overrides the flag."""
    values = {k: v for k, v in flags.items() if k in _HYPER_FLAG_KEYS and v is not None}
    if config_path:
        with open(config_path) as f:
            try:
                overrides = json.load(f)
            except json.JSONDecodeError as exc:
                raise ConfigurationError(f"config file {config_path}: invalid JSON ({exc})") from exc
        if not isinstance(overrides, dict):
            raise ConfigurationError(f"config file {config_path} must hold a JSON object")
        if "seed" in overrides:
            seed = int(overrides["seed"])
        values.update({k: v for k, v in overrides.items() if k != "seed"})
    return Hyperparameters.from_dict(values), seed


@click.group()
@click.version_option(version=__version__)
def main():
    """Sparse varying-coefficient models via Bayesian tree ensembles."""


# ---------------------------------------------------------------- simulate


@main.command()
@click.option("--experiment", type=click.Choice(["exp1", "exp2", "custom"]), default="exp1")
@click.option("--n-train", type=int, default=1000, show_default=True)
@click.option("--n-test", type=int, default=200, show_default=True)
@click.option("--p", type=int, default=None, help="Covariate count (experiment default if omitted).")
@click.option("--r", "n_modifiers", type=int, default=20, show_default=True)
@click.option("--rho", type=float, default=0.5, show_default=True)
@click.option("--noise-sd", type=float, default=1.0, show_default=True)
@click.option("--beta0-raw", is_flag=True, help="Use the alternative (unrepaired) beta_0 reading.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
@_wrap_errors
def simulate(experiment, n_train, n_test, p, n_modifiers, rho, noise_sd, beta0_raw, seed, out):
    """Write train/test CSVs (the test file carries the true coefficient
    surfaces and doubles as the truth file)."""
    kw = dict(n_train=n_train, n_test=n_test, R=n_modifiers, rho=rho,
              noise_sd=noise_sd, beta0_raw=beta0_raw)
    if p is not None:
        kw["p"] = p
    spec = make_spec(experiment, **kw)
    train, test = generate(spec, RngStream(seed, 0).generator())
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    save_csv(train, out / "train.csv")
    save_csv(test, out / "test.csv")
    meta = {"command": "simulate", "seed": seed, "version": __version__,
            "spec": {k: getattr(spec, k) for k in
                     ("experiment", "n_train", "n_test", "p", "R", "rho", "noise_sd", "beta0_raw")}}
    with open(out / "sim_meta.json", "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
    click.echo(f"wrote {out}/train.csv, {out}/test.csv")


# --------------------------------------------------------------------- fit


def _fit_one_chain(args: tuple) -> dict:
    """Worker: run one chain and save its output directory."""
    x, z, y, hyper_dict, grid, seed, chain_idx, chain_dir = args
    hyper = Hyperparameters.from_dict(hyper_dict)
    dataset = Dataset(X=x, Z=z, y=y)
    output = run_chain(dataset, hyper, grid, RngStream(seed, chain_idx))
    output.save(chain_dir)
    return output.meta


def fit_chains(dataset: Dataset, hyper: Hyperparameters, grid, seed: int, out_dir,
               workers: int | None = None) -> dict:
    """Run `hyper.chains` chains (in parallel processes when workers > 1)
    and write chain_XX subdirectories plus a consolidated meta.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    hyper = hyper.resolve(dataset.y, max(dataset.p, 2))
    workers = workers or _default_workers(hyper.chains)
    jobs = [
        (dataset.X, dataset.Z, dataset.y, hyper.to_dict(), np.asarray(grid), seed, c,
         str(out / f"chain_{c:02d}"))
        for c in range(hyper.chains)
    ]
    start = time.perf_counter()
    if workers > 1 and hyper.chains > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            metas = list(pool.map(_fit_one_chain, jobs))
    else:
        metas = [_fit_one_chain(j) for j in jobs]
    wall = time.perf_counter() - start
    meta = {
        "command": "fit",
        "version": __version__,
        "seed": seed,
        "config": hyper.to_dict(),
        "chains": [f"chain_{c:02d}" for c in range(hyper.chains)],
        "workers": workers,
        "wall_seconds": wall,
        "accept_rate": [m["accept_rate"] for m in metas],
        "chain_runtime_seconds": [m["runtime_seconds"] for m in metas],
        "n_obs": metas[0]["n_obs"],
        "n_cov": metas[0]["n_cov"],
        "n_modifiers": metas[0]["n_modifiers"],
    }
    with open(out / "meta.json", "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
    return meta


@main.command()
@click.option("--train", "train_path", type=click.Path(), required=True)
@click.option("--grid", "grid_path", type=click.Path(), default=None,
              help="Dataset CSV whose z_* columns are the query grid (default: training modifiers).")
@click.option("--out", type=click.Path(), required=True)
@click.option("--chains", type=int, default=4, show_default=True)
@click.option("--iters", type=int, default=2000, show_default=True)
@click.option("--burn", type=int, default=400, show_default=True)
@click.option("--thin", type=int, default=1, show_default=True)
@click.option("--beta-thin", type=int, default=1, show_default=True)
@click.option("--m-trees", type=int, default=50, show_default=True)
@click.option("--nu", type=float, default=3.0, show_default=True)
@click.option("--nu-c", type=float, default=4.0, show_default=True)
@click.option("--s-c", type=float, default=2.0, show_default=True)
@click.option("--tau0", type=float, default=None, help="Global-scale prior scale (default: data formula).")
@click.option("--noise-scale", type=float, default=None, help="Noise IG rate input (default: 90% calibration).")
@click.option("--cutpoint-mode", type=click.Choice(["uniform", "midpoints"]), default="uniform")
@click.option("--c2-update", type=click.Choice(["conjugate", "slice-exact"]), default="conjugate")
@click.option("--shrinkage", type=click.Choice(["sparse", "constant"]), default="sparse")
@click.option("--leaf-variance", type=click.Choice(["s2", "s2_over_m"]), default="s2")
@click.option("--eta-step", type=float, default=1.0, show_default=True)
@click.option("--rescale-z", is_flag=True, help="Min-max map modifier columns to [0,1].")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--workers", type=int, default=None, help="Parallel chain processes (env VCTREES_WORKERS).")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="JSON hyperparameter file; overrides flags.")
@_wrap_errors
def fit(train_path, grid_path, out, rescale_z, seed, workers, config_path, **flags):
    """Fit the model: load data, calibrate defaults, run chains in parallel,
    and write per-chain output directories plus a consolidated meta.json."""
    hyper, seed = _build_hyper(flags, config_path, seed)
    dataset, load_meta = load_csv(train_path, rescale=rescale_z)
    if grid_path:
        grid_ds, _ = load_csv(grid_path, rescale=False)
        if grid_ds.R != dataset.R:
            raise DataError(f"grid file has {grid_ds.R} modifiers; training data has {dataset.R}")
        grid = grid_ds.Z
    else:
        grid = dataset.Z
    try:
        meta = fit_chains(dataset, hyper, grid, seed, out, workers=workers)
    except ChainError as exc:
        Path(out).mkdir(parents=True, exist_ok=True)
        with open(Path(out) / "meta.json", "w") as f:
            json.dump({"command": "fit", "status": "aborted", "error": str(exc),
                       "sweep": exc.sweep, "seed": seed}, f, indent=2)
        raise
    meta["train"] = str(train_path)
    meta["grid"] = str(grid_path) if grid_path else "train"
    meta["load"] = load_meta
    with open(Path(out) / "meta.json", "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
    click.echo(f"fit complete: {hyper.chains} chains in {meta['wall_seconds']:.1f}s -> {out}")


# --------------------------------------------------------------- summarize


def load_run(run_dir) -> list[ChainOutput]:
    run = Path(run_dir)
    if not run.exists():
        raise DataError(f"run directory not found: {run}")
    chain_dirs = sorted(run.glob("chain_*"))
    if not chain_dirs:
        raise DataError(f"no chain_* directories under {run}")
    return [ChainOutput.load(d) for d in chain_dirs]


def summarize_run(run_dir, truth_path=None, out_dir=None, threshold=None, min_ratio=1.5,
                  figures=True):
    """Shared by the summarize command and the experiment pipeline."""
    chains = load_run(run_dir)
    report = summarize(chains)
    truth = None
    truth_ds = None
    if truth_path:
        truth_ds, _ = load_csv(truth_path, rescale=False)
        if truth_ds.beta_true is None:
            raise DataError(f"{truth_path} has no beta_true_* columns")
        if truth_ds.beta_true.shape[0] != report.grid.shape[0]:
            raise DataError("truth file rows do not match the query grid")
        truth = truth_ds.beta_true
        coverage_and_mse(report, truth)
        predictive_metrics(report, chains, truth_ds.X, truth_ds.y)
    selected = lambda_screen(report, threshold=threshold, min_ratio=min_ratio)
    selection = {
        "selected_covariates": selected,
        "rule": {"mode": "fixed" if threshold is not None else "elbow",
                 "threshold": threshold, "min_ratio": min_ratio},
        "lambda_median": report.lambda_median.tolist(),
        "modifiers": {str(j): modifier_report(chains, j) for j in ([0] + selected)},
    }
    if out_dir is not None:
        report.save(out_dir, selection=selection)
        if figures:
            from .plots import render_report_figures

            render_report_figures(report, out_dir, selected=selected, truth=truth)
    return report, selection


@main.command(name="summarize")
@click.option("--run", "run_dir", type=click.Path(), required=True)
@click.option("--truth", "truth_path", type=click.Path(), default=None,
              help="CSV with beta_true_* columns on the query grid (e.g. the test file).")
@click.option("--out", type=click.Path(), required=True)
@click.option("--compare", "compare_dir", type=click.Path(), default=None,
              help="Second run directory for a side-by-side table.")
@click.option("--threshold", type=float, default=None, help="Fixed screening threshold.")
@click.option("--min-ratio", type=float, default=1.5, show_default=True)
@click.option("--figures/--no-figures", default=True, show_default=True)
@_wrap_errors
def summarize_cmd(run_dir, truth_path, out, compare_dir, threshold, min_ratio, figures):
    """Summarize a fit: surface means/intervals, screening diagnostics,
    metric tables, plot-data CSVs, and report figures."""
    report, selection = summarize_run(run_dir, truth_path, out, threshold, min_ratio, figures)
    click.echo(f"selected covariates: {selection['selected_covariates']}")
    if report.mse is not None:
        click.echo(f"mean MSE: {report.mse.mean():.4f}  mean coverage: {report.coverage.mean():.3f}")
    if compare_dir:
        other, _ = summarize_run(compare_dir, truth_path, None, threshold, min_ratio, False)
        with open(Path(out) / "comparison.csv", "w") as f:
            f.write("j,lambda_median_a,lambda_median_b,mse_a,mse_b,coverage_a,coverage_b\n")
            for j in range(report.n_ens):
                row = [j, report.lambda_median[j], other.lambda_median[j]]
                row += [report.mse[j] if report.mse is not None else ""]
                row += [other.mse[j] if other.mse is not None else ""]
                row += [report.coverage[j] if report.coverage is not None else ""]
                row += [other.coverage[j] if other.coverage is not None else ""]
                f.write(",".join(str(v) for v in row) + "\n")
        click.echo(f"comparison table -> {out}/comparison.csv")


# -------------------------------------------------------------- experiment


@main.command()
@click.option("--experiment", type=click.Choice(["exp1", "exp2"]), default="exp1", show_default=True)
@click.option("--replications", type=int, default=5, show_default=True)
@click.option("--n-train", type=int, default=500, show_default=True)
@click.option("--n-test", type=int, default=100, show_default=True)
@click.option("--p", type=int, default=None, help="Covariate count (experiment default if omitted).")
@click.option("--r", "n_modifiers", type=int, default=20, show_default=True)
@click.option("--chains", type=int, default=4, show_default=True)
@click.option("--iters", type=int, default=1000, show_default=True)
@click.option("--burn", type=int, default=200, show_default=True)
@click.option("--m-trees", type=int, default=50, show_default=True)
@click.option("--beta-thin", type=int, default=1, show_default=True)
@click.option("--ablation", type=click.Choice(["constant-shrinkage"]), default=None,
              help="Also fit the constant-shrinkage baseline per replication.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--workers", type=int, default=None)
@click.option("--out", type=click.Path(), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@_wrap_errors
def experiment(experiment, replications, n_train, n_test, p, n_modifiers, chains, iters,
               burn, m_trees, beta_thin, ablation, seed, workers, out, config_path):
    """Replicated simulate -> fit -> summarize pipeline with aggregation
    (desk-scale defaults; the full reference scale is reachable via flags)."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    flags = dict(chains=chains, iters=iters, burn=burn, m_trees=m_trees, beta_thin=beta_thin)
    hyper, seed = _build_hyper(flags, config_path, seed)
    modes = ["sparse"] + (["constant"] if ablation else [])
    kw = dict(n_train=n_train, n_test=n_test, R=n_modifiers)
    if p is not None:
        kw["p"] = p
    rows = []
    failures = []
    start = time.perf_counter()
    for rep in range(replications):
        rep_dir = out / f"rep_{rep:02d}"
        rep_dir.mkdir(parents=True, exist_ok=True)
        spec = make_spec(experiment, **kw)
        train, test = generate(spec, RngStream(seed, 1000 + rep).generator())
        save_csv(train, rep_dir / "train.csv")
        save_csv(test, rep_dir / "test.csv")
        for mode in modes:
            try:
                mode_hyper = replace(hyper, shrinkage=mode)
                run_dir = rep_dir / f"run_{mode}"
                fit_chains(train, mode_hyper, test.Z, seed * 10007 + rep, run_dir, workers=workers)
                report, selection = summarize_run(
                    run_dir, rep_dir / "test.csv", rep_dir / f"summary_{mode}",
                )
                active = [j for j in range(1, min(4, train.p + 1))]
                null = [j for j in range(4, train.p + 1)]
                row = {
                    "rep": rep,
                    "mode": mode,
                    "mse_mean": float(report.mse.mean()),
                    "mse_active": float(report.mse[active].mean()) if active else float("nan"),
                    "mse_null": float(report.mse[null].mean()) if null else float("nan"),
                    "coverage_mean": float(report.coverage.mean()),
                    "predictive_rmse": report.predictive_rmse,
                    "lambda_active_min": float(np.min(report.lambda_median[active])) if active else float("nan"),
                    "lambda_null_max": float(np.max(report.lambda_median[null])) if null else float("nan"),
                    "selected": selection["selected_covariates"],
                }
                rows.append(row)
                click.echo(
                    f"rep {rep} {mode}: MSE {row['mse_mean']:.4f} "
                    f"(null {row['mse_null']:.4f}) coverage {row['coverage_mean']:.3f}"
                )
            except (ChainError, SliceError, DataError) as exc:
                failures.append({"rep": rep, "mode": mode, "error": str(exc)})
                click.echo(f"rep {rep} {mode} failed: {exc}", err=True)
    wall = time.perf_counter() - start
    cols = ["rep", "mode", "mse_mean", "mse_active", "mse_null", "coverage_mean",
            "predictive_rmse", "lambda_active_min", "lambda_null_max", "selected"]
    with open(out / "aggregate.csv", "w") as f:
        f.write(",".join(cols) + "\n")
        for row in rows:
            cells = [
                json.dumps(row[c], separators=(";", ":")) if c == "selected" else str(row[c])
                for c in cols
            ]
            f.write(",".join(cells) + "\n")
    agg = {}
    for mode in modes:
        sub = [r for r in rows if r["mode"] == mode]
        if sub:
            agg[mode] = {k: float(np.mean([r[k] for r in sub]))
                         for k in ("mse_mean", "mse_active", "mse_null", "coverage_mean")}
    contrast = None
    if ablation:
        wins = sum(
            1 for rep in range(replications)
            if any(r["rep"] == rep and r["mode"] == "sparse" for r in rows)
            and any(r["rep"] == rep and r["mode"] == "constant" for r in rows)
            and next(r for r in rows if r["rep"] == rep and r["mode"] == "sparse")["mse_null"]
            < next(r for r in rows if r["rep"] == rep and r["mode"] == "constant")["mse_null"]
        )
        contrast = {"sparse_null_mse_wins": wins, "replications": replications}
    meta = {
        "command": "experiment",
        "version": __version__,
        "experiment": experiment,
        "seed": seed,
        "config": hyper.to_dict(),
        "spec": kw | {"experiment": experiment},
        "replications": replications,
        "ablation": ablation,
        "aggregate": agg,
        "contrast": contrast,
        "failures": failures,
        "wall_seconds": wall,
    }
    with open(out / "meta.json", "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
    click.echo(f"experiment complete in {wall:.1f}s -> {out}/aggregate.csv")


if __name__ == "__main__":
    main()
