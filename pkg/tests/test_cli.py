import json
import time
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from vctrees.cli import main


@pytest.fixture
def runner():
    return CliRunner()


def run_ok(runner, args):
    result = runner.invoke(main, args, catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return result


class TestSimulate:
    def test_deterministic_bytes(self, runner, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        args = ["simulate", "--experiment", "exp1", "--n-train", "40", "--n-test", "10",
                "--r", "5", "--seed", "7"]
        run_ok(runner, args + ["--out", str(a)])
        run_ok(runner, args + ["--out", str(b)])
        assert (a / "train.csv").read_bytes() == (b / "train.csv").read_bytes()
        assert (a / "test.csv").read_bytes() == (b / "test.csv").read_bytes()

    def test_exp2_has_fifty_covariates(self, runner, tmp_path):
        out = tmp_path / "sim"
        run_ok(runner, ["simulate", "--experiment", "exp2", "--n-train", "20",
                        "--n-test", "5", "--r", "6", "--out", str(out)])
        header = (out / "train.csv").read_text().splitlines()[0].split(",")
        assert sum(1 for h in header if h.startswith("x_")) == 50

    def test_truth_columns_in_test_file(self, runner, tmp_path):
        out = tmp_path / "sim"
        run_ok(runner, ["simulate", "--n-train", "20", "--n-test", "5", "--r", "5",
                        "--out", str(out)])
        header = (out / "test.csv").read_text().splitlines()[0].split(",")
        assert "beta_true_0" in header and "beta_true_3" in header


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    runner = CliRunner()
    out = tmp_path_factory.mktemp("data") / "sim"
    result = runner.invoke(main, ["simulate", "--experiment", "exp1", "--n-train", "150",
                                  "--n-test", "40", "--r", "5", "--seed", "3",
                                  "--out", str(out)])
    assert result.exit_code == 0
    return out


@pytest.fixture(scope="module")
def fitted_run(sim_dir, tmp_path_factory):
    runner = CliRunner()
    out = tmp_path_factory.mktemp("fits") / "run"
    result = runner.invoke(main, [
        "fit", "--train", str(sim_dir / "train.csv"), "--grid", str(sim_dir / "test.csv"),
        "--out", str(out), "--chains", "2", "--iters", "80", "--burn", "30",
        "--m-trees", "10", "--seed", "11", "--workers", "1",
    ])
    assert result.exit_code == 0, result.output
    return out


class TestFit:
    def test_smoke_run_is_fast(self, runner, sim_dir, tmp_path):
        out = tmp_path / "run"
        start = time.perf_counter()
        run_ok(runner, ["fit", "--train", str(sim_dir / "train.csv"), "--out", str(out),
                        "--chains", "1", "--iters", "10", "--burn", "2", "--m-trees", "10",
                        "--workers", "1"])
        assert time.perf_counter() - start < 5.0

    def test_outputs_and_meta(self, fitted_run):
        meta = json.loads((fitted_run / "meta.json").read_text())
        assert meta["chains"] == ["chain_00", "chain_01"]
        assert meta["seed"] == 11
        assert meta["config"]["iters"] == 80
        # omitted hyperparameters: the calibrated defaults land in the echo
        assert meta["config"]["noise_scale"] > 0
        assert meta["config"]["tau0"] > 0
        # meta alone suffices to re-run the job
        for key in ("train", "grid", "config", "seed", "workers"):
            assert key in meta
        params = (fitted_run / "chain_00" / "params.csv").read_text().splitlines()
        assert params[0].startswith("# seed=")
        assert params[1].split(",")[:3] == ["sigma2", "tau", "c2"]
        assert len(params) == 2 + 50  # (80 - 30) kept draws

    def test_invalid_burn_exits_2(self, runner, sim_dir, tmp_path):
        result = runner.invoke(main, ["fit", "--train", str(sim_dir / "train.csv"),
                                      "--out", str(tmp_path / "x"), "--iters", "10",
                                      "--burn", "10", "--workers", "1"])
        assert result.exit_code == 2

    def test_config_file_overrides_flags(self, runner, sim_dir, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"iters": 12, "burn": 4, "m_trees": 3, "seed": 77}))
        out = tmp_path / "run"
        run_ok(runner, ["fit", "--train", str(sim_dir / "train.csv"), "--out", str(out),
                        "--iters", "99", "--burn", "50", "--m-trees", "20", "--seed", "1",
                        "--config", str(cfg), "--workers", "1"])
        meta = json.loads((out / "meta.json").read_text())
        assert meta["config"]["iters"] == 12
        assert meta["config"]["m_trees"] == 3
        assert meta["seed"] == 77  # config file wins over the flag
        first = (out / "chain_00" / "params.csv").read_text().splitlines()[0]
        assert first == "# seed=77"

    def test_determinism_across_runs(self, runner, sim_dir, tmp_path):
        args = ["fit", "--train", str(sim_dir / "train.csv"), "--chains", "1",
                "--iters", "20", "--burn", "5", "--m-trees", "5", "--seed", "21",
                "--workers", "1"]
        a, b = tmp_path / "a", tmp_path / "b"
        run_ok(runner, args + ["--out", str(a)])
        run_ok(runner, args + ["--out", str(b)])
        assert (a / "chain_00" / "params.csv").read_bytes() == \
               (b / "chain_00" / "params.csv").read_bytes()

    def test_rescale_z_flag(self, runner, tmp_path):
        data = tmp_path / "raw.csv"
        rows = ["y,x_1,z_1"] + [f"{i * 0.5},{i * 0.1},{10 + i}" for i in range(20)]
        data.write_text("\n".join(rows) + "\n")
        out = tmp_path / "run"
        run_ok(runner, ["fit", "--train", str(data), "--out", str(out), "--chains", "1",
                        "--iters", "8", "--burn", "2", "--m-trees", "2", "--rescale-z",
                        "--workers", "1"])
        meta = json.loads((out / "meta.json").read_text())
        assert meta["load"]["rescaled"] is True
        assert meta["load"]["z_offset"] == [10.0]

    def test_parallel_workers_match_serial(self, runner, sim_dir, tmp_path):
        base = ["fit", "--train", str(sim_dir / "train.csv"), "--chains", "2",
                "--iters", "15", "--burn", "5", "--m-trees", "4", "--seed", "2"]
        a, b = tmp_path / "serial", tmp_path / "parallel"
        run_ok(runner, base + ["--workers", "1", "--out", str(a)])
        run_ok(runner, base + ["--workers", "2", "--out", str(b)])
        for c in ("chain_00", "chain_01"):
            assert (a / c / "params.csv").read_bytes() == (b / c / "params.csv").read_bytes()


class TestSummarize:
    def test_with_truth_emits_metrics(self, runner, sim_dir, fitted_run, tmp_path):
        out = tmp_path / "rep"
        result = run_ok(runner, ["summarize", "--run", str(fitted_run), "--truth",
                                 str(sim_dir / "test.csv"), "--out", str(out)])
        assert "mean MSE" in result.output
        rows = (out / "summary.csv").read_text().splitlines()
        assert rows[0].startswith("j,lambda_median,mse,coverage")
        assert len(rows) == 1 + 4  # intercept + 3 covariates
        sel = json.loads((out / "selection.json").read_text())
        assert "selected_covariates" in sel
        assert (out / "figure_lambda.png").exists()
        assert (out / "figure_beta_0.png").exists()
        assert (out / "plotdata_beta_1.csv").exists()

    def test_without_truth_selection_only(self, runner, fitted_run, tmp_path):
        out = tmp_path / "rep"
        result = run_ok(runner, ["summarize", "--run", str(fitted_run), "--out", str(out),
                                 "--no-figures"])
        assert "mean MSE" not in result.output
        rows = (out / "summary.csv").read_text().splitlines()
        assert rows[1].split(",")[2] == ""  # empty mse column

    def test_missing_run_dir_exits_3(self, runner, tmp_path):
        result = runner.invoke(main, ["summarize", "--run", str(tmp_path),
                                      "--out", str(tmp_path / "o")])
        assert result.exit_code == 3

    def test_compare_mode(self, runner, sim_dir, fitted_run, tmp_path):
        out = tmp_path / "rep"
        run_ok(runner, ["summarize", "--run", str(fitted_run), "--truth",
                        str(sim_dir / "test.csv"), "--out", str(out),
                        "--compare", str(fitted_run), "--no-figures"])
        rows = (out / "comparison.csv").read_text().splitlines()
        assert rows[0].startswith("j,lambda_median_a,lambda_median_b")
        assert len(rows) == 5


class TestExperiment:
    def test_single_replication_pipeline(self, runner, tmp_path):
        out = tmp_path / "expt"
        run_ok(runner, ["experiment", "--experiment", "exp1", "--replications", "1",
                        "--n-train", "80", "--n-test", "20", "--r", "5", "--chains", "1",
                        "--iters", "30", "--burn", "10", "--m-trees", "5", "--seed", "5",
                        "--workers", "1", "--out", str(out)])
        rows = (out / "aggregate.csv").read_text().splitlines()
        assert len(rows) == 2
        meta = json.loads((out / "meta.json").read_text())
        assert meta["replications"] == 1
        assert (out / "rep_00" / "summary_sparse" / "summary.csv").exists()

    def test_ablation_freezes_lambda_traces(self, runner, tmp_path):
        out = tmp_path / "expt"
        run_ok(runner, ["experiment", "--experiment", "exp1", "--replications", "1",
                        "--n-train", "60", "--n-test", "15", "--r", "5", "--chains", "1",
                        "--iters", "20", "--burn", "5", "--m-trees", "4",
                        "--ablation", "constant-shrinkage", "--seed", "5",
                        "--workers", "1", "--out", str(out)])
        params = np.loadtxt(out / "rep_00" / "run_constant" / "chain_00" / "params.csv",
                            delimiter=",", skiprows=2)
        lam_cols = params[:, 3:3 + 4]
        assert np.all(lam_cols == 1.0)
        meta = json.loads((out / "meta.json").read_text())
        assert meta["contrast"] is not None
