import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vctrees.datagen import (
    DataError,
    Dataset,
    DgpSpec,
    augment_noise_covariates,
    generate,
    load_csv,
    make_spec,
    save_csv,
    true_beta,
    _correlation_root,
)


class TestTrueBeta:
    def test_beta2_is_constant_one(self, rng):
        z = rng.random((50, 20))
        assert np.all(true_beta(2, z) == 1.0)

    def test_beta1_dead_zone(self, rng):
        z = rng.random((30, 5))
        z[:, 0] = rng.uniform(0.25, 0.6, 30)
        assert np.all(true_beta(1, z) == 0.0)

    def test_beta3_direct_substitution(self):
        z = np.full((1, 5), 0.5)
        expect = 10 * math.sin(math.pi * 0.25) + 7.5
        assert true_beta(3, z)[0] == pytest.approx(expect)

    def test_beta0_repaired_vs_raw_reading(self):
        z = np.array([[0.3, 0.8]])
        repaired = 3 * 0.3 + (2 - 5) * math.sin(math.pi * 0.3) - 2
        raw = 3 * 0.3 + 2 - 5 * math.sin(math.pi * 0.3) - 2
        assert true_beta(0, z)[0] == pytest.approx(repaired)
        assert true_beta(0, z, beta0_raw=True)[0] == pytest.approx(raw)

    def test_null_coefficients_above_three(self, rng):
        z = rng.random((10, 20))
        for j in range(4, 9):
            assert np.all(true_beta(j, z, p=10) == 0.0)

    def test_out_of_range_index(self):
        with pytest.raises(DataError):
            true_beta(5, np.zeros((1, 5)), p=4)


class TestGenerate:
    def test_default_experiment_shapes(self, rng):
        train, test = generate(DgpSpec.exp1(), rng)
        assert train.X.shape == (1000, 3) and train.Z.shape == (1000, 20)
        assert test.X.shape == (200, 3)
        train2, _ = generate(DgpSpec.exp2(n_train=50, n_test=10), rng)
        assert train2.p == 50

    def test_zero_correlation_gives_identity_cov(self, rng):
        spec = DgpSpec(experiment="custom", n_train=10_000, n_test=10, p=4, R=5, rho=0.0)
        train, _ = generate(spec, rng)
        cov = np.cov(train.X.T)
        off = cov - np.diag(np.diag(cov))
        assert np.max(np.abs(off)) < 0.05

    def test_adjacent_correlation_matches_rho(self, rng):
        spec = DgpSpec(experiment="custom", n_train=10_000, n_test=10, p=3, R=5, rho=0.5)
        train, _ = generate(spec, rng)
        r = np.corrcoef(train.X[:, 0], train.X[:, 1])[0, 1]
        assert r == pytest.approx(0.5, abs=0.03)

    def test_noise_sd_recovered(self, rng):
        spec = DgpSpec.exp1(n_train=10_000, n_test=10, noise_sd=1.0)
        train, _ = generate(spec, rng)
        resid = train.y - train.beta_true[:, 0] - np.sum(train.beta_true[:, 1:] * train.X, axis=1)
        assert np.std(resid) == pytest.approx(1.0, rel=0.05)

    def test_same_seed_bit_identical(self):
        spec = DgpSpec.exp1(n_train=50, n_test=10)
        a, _ = generate(spec, np.random.default_rng(9))
        b, _ = generate(spec, np.random.default_rng(9))
        assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(min_value=-0.98, max_value=0.98))
    def test_correlation_factorization_pd(self, rho):
        root = _correlation_root(6, rho)
        sigma = root @ root.T
        idx = np.arange(6)
        assert np.allclose(sigma, rho ** np.abs(idx[:, None] - idx[None, :]), atol=1e-10)

    def test_spec_validation(self):
        with pytest.raises(DataError):
            DgpSpec(rho=1.0)
        with pytest.raises(DataError):
            DgpSpec(experiment="exp9")
        with pytest.raises(DataError):
            DgpSpec(n_train=0)


class TestAugmentNoise:
    def test_zero_is_identity(self, rng):
        train, _ = generate(DgpSpec.exp1(n_train=30, n_test=5), rng)
        assert augment_noise_covariates(train, 0, rng) is train

    def test_adds_named_columns(self, rng):
        train, _ = generate(DgpSpec.exp1(n_train=30, n_test=5), rng)
        aug = augment_noise_covariates(train, 18, rng)
        assert aug.p == train.p + 18
        assert aug.x_names[-1] == "noise_18"
        assert aug.beta_true.shape == (30, train.p + 19)
        assert np.all(aug.beta_true[:, train.p + 1:] == 0)

    def test_noise_uncorrelated_with_response(self, rng):
        train, _ = generate(DgpSpec.exp1(n_train=5000, n_test=5), rng)
        aug = augment_noise_covariates(train, 3, rng)
        for k in range(3):
            r = np.corrcoef(aug.X[:, train.p + k], aug.y)[0, 1]
            assert abs(r) < 0.05


class TestCsvRoundTrip:
    def test_bitwise_round_trip(self, rng, tmp_path):
        train, _ = generate(DgpSpec.exp1(n_train=40, n_test=5), rng)
        path = tmp_path / "train.csv"
        save_csv(train, path)
        loaded, meta = load_csv(path)
        assert np.array_equal(loaded.X, train.X)
        assert np.array_equal(loaded.Z, train.Z)
        assert np.array_equal(loaded.y, train.y)
        assert np.array_equal(loaded.beta_true, train.beta_true)
        assert meta["rescaled"] is False

    def test_nan_cell_reports_row_and_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("y,x_1,z_1\n1.0,2.0,0.5\n1.0,nan,0.5\n")
        with pytest.raises(DataError, match=r"row 3.*x_1"):
            load_csv(path)

    def test_non_numeric_cell(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("y,x_1,z_1\n1.0,oops,0.5\n")
        with pytest.raises(DataError, match="non-numeric"):
            load_csv(path)

    def test_missing_columns(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("y,x_1\n1.0,2.0\n")
        with pytest.raises(DataError, match="modifier"):
            load_csv(path)

    def test_out_of_range_z_requires_rescale(self, tmp_path):
        path = tmp_path / "z.csv"
        path.write_text("y,x_1,z_1\n1.0,2.0,10.0\n2.0,1.0,20.0\n")
        with pytest.raises(DataError, match="outside"):
            load_csv(path)
        loaded, meta = load_csv(path, rescale=True)
        assert loaded.Z[0, 0] == 0.0 and loaded.Z[1, 0] == 1.0
        assert meta["z_offset"] == [10.0] and meta["z_span"] == [10.0]

    def test_rescale_midpoint_value(self, tmp_path):
        path = tmp_path / "z.csv"
        path.write_text("y,x_1,z_1\n1.0,2.0,10.0\n2.0,1.0,15.0\n0.5,0.1,20.0\n")
        loaded, _ = load_csv(path, rescale=True)
        assert loaded.Z[1, 0] == pytest.approx(0.5)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_csv(tmp_path / "nope.csv")


class TestDatasetValidation:
    def test_z_outside_unit_cube_rejected(self, rng):
        with pytest.raises(DataError):
            Dataset(X=rng.standard_normal((5, 1)), Z=np.full((5, 1), 1.5), y=rng.standard_normal(5))

    def test_nan_rejected(self, rng):
        X = rng.standard_normal((5, 1))
        X[0, 0] = np.nan
        with pytest.raises(DataError):
            Dataset(X=X, Z=rng.random((5, 1)), y=rng.standard_normal(5))

    def test_make_spec_dispatch(self):
        assert make_spec("exp1").p == 3
        assert make_spec("exp2").p == 50
        assert make_spec("custom", p=7).p == 7
