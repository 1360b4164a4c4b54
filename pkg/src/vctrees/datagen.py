"""Synthetic data generation for the two benchmark experiments,
noise-covariate augmentation, and CSV dataset ingestion.

CSV schema: header row with columns ``y, x_1..x_p, z_1..z_R`` (optionally
``beta_true_0..beta_true_p``); UTF-8, '.' decimal, no thousands separators.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .samplers import as_generator


class DataError(ValueError):
    """Raised for malformed datasets or unparseable CSV input."""


@dataclass
class Dataset:
    """N rows of (x in R^p, z in [0,1]^R, y in R) with column names."""

    X: np.ndarray
    Z: np.ndarray
    y: np.ndarray
    beta_true: np.ndarray | None = None   # (N, p+1) evaluations, when known
    x_names: list[str] | None = None
    z_names: list[str] | None = None

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        self.Z = np.atleast_2d(np.asarray(self.Z, dtype=np.float64))
        self.y = np.asarray(self.y, dtype=np.float64)
        n = self.y.shape[0]
        if self.X.shape[0] != n or self.Z.shape[0] != n:
            raise DataError("X, Z, y must have the same number of rows")
        for name, arr in (("X", self.X), ("Z", self.Z), ("y", self.y)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"{name} contains NaN or Inf")
        if self.Z.size and (self.Z.min() < 0.0 or self.Z.max() > 1.0):
            raise DataError("Z entries must lie in [0,1]; pass rescale=True to load_csv")
        if self.x_names is None:
            self.x_names = [f"x_{j + 1}" for j in range(self.p)]
        if self.z_names is None:
            self.z_names = [f"z_{r + 1}" for r in range(self.R)]
        if self.beta_true is not None:
            self.beta_true = np.atleast_2d(np.asarray(self.beta_true, dtype=np.float64))
            if self.beta_true.shape != (n, self.p + 1):
                raise DataError("beta_true must have shape (N, p+1)")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def R(self) -> int:
        return self.Z.shape[1]


@dataclass(frozen=True)
class DgpSpec:
    """Synthetic-experiment configuration.

    ``exp1``: p=3 covariates, all active.  ``exp2``: first three covariates
    active, the rest null.  Covariates are correlated Gaussians with
    Sigma_ij = rho^|i-j|; modifiers are uniform on [0,1]^R.
    """

    experiment: str = "exp1"
    n_train: int = 1000
    n_test: int = 200
    p: int = 3
    R: int = 20
    rho: float = 0.5
    noise_sd: float = 1.0
    beta0_raw: bool = False

    def __post_init__(self):
        if self.experiment not in ("exp1", "exp2", "custom"):
            raise DataError(f"unknown experiment {self.experiment!r}")
        if self.n_train < 1 or self.n_test < 0:
            raise DataError("sample sizes must be positive")
        if self.p < 1 or self.R < 1:
            raise DataError("p and R must be >= 1")
        if self.p >= 3 and self.R < 5:
            raise DataError("the third coefficient surface uses modifiers z_1..z_5; need R >= 5")
        if not -1.0 < self.rho < 1.0:
            raise DataError(f"rho must be in (-1,1), got {self.rho}")
        if self.noise_sd < 0:
            raise DataError("noise_sd must be nonnegative")

    @classmethod
    def exp1(cls, **kw) -> "DgpSpec":
        kw.setdefault("p", 3)
        kw.setdefault("R", 20)
        return cls(experiment="exp1", **kw)

    @classmethod
    def exp2(cls, **kw) -> "DgpSpec":
        kw.setdefault("p", 50)
        kw.setdefault("R", 20)
        return cls(experiment="exp2", **kw)


def true_beta(j: int, z, p: int = 3, beta0_raw: bool = False) -> np.ndarray:
    """True coefficient surfaces of the benchmark generative model.

    beta_0 modulates a sinusoid's amplitude by an indicator in z_2 (the
    ``beta0_raw`` flag switches to the alternative reading where the
    indicator scales the sinusoid inside a flat +2 offset); beta_1 is a
    two-regime function of z_1 with a dead zone in [0.25, 0.6]; beta_2 is
    constant 1; beta_3 mixes five modifiers; all higher coefficients are
    identically zero.
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if not 0 <= j <= p:
        raise DataError(f"coefficient index {j} out of range for p={p}")
    z1 = z[:, 0]
    if j == 0:
        ind2 = (z[:, 1] > 0.5).astype(np.float64)
        if beta0_raw:
            return 3.0 * z1 + 2.0 - 5.0 * ind2 * np.sin(math.pi * z1) - 2.0 * ind2
        return 3.0 * z1 + (2.0 - 5.0 * ind2) * np.sin(math.pi * z1) - 2.0 * ind2
    if j == 1:
        return (3.0 - 3.0 * z1 ** 2) * (z1 > 0.6) - 10.0 * np.sqrt(z1) * (z1 < 0.25)
    if j == 2:
        return np.ones(z.shape[0])
    if j == 3:
        if z.shape[1] < 5:
            raise DataError("beta_3 needs at least 5 modifiers")
        return (
            10.0 * np.sin(math.pi * z1 * z[:, 1])
            + 20.0 * (z[:, 2] - 0.5) ** 2
            + 10.0 * z[:, 3]
            + 5.0 * z[:, 4]
        )
    return np.zeros(z.shape[0])


def _beta_matrix(Z, p: int, beta0_raw: bool) -> np.ndarray:
    return np.column_stack([true_beta(j, Z, p=p, beta0_raw=beta0_raw) for j in range(p + 1)])


def _correlation_root(p: int, rho: float) -> np.ndarray:
    """Lower-triangular factor of Sigma_ij = rho^|i-j| (positive definite
    for all |rho| < 1)."""
    idx = np.arange(p)
    sigma = rho ** np.abs(idx[:, None] - idx[None, :])
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:  # cannot happen for |rho| < 1
        raise DataError(f"correlation matrix factorization failed: {exc}") from exc


def _sample_dataset(spec: DgpSpec, n: int, rng) -> Dataset:
    root = _correlation_root(spec.p, spec.rho)
    X = rng.standard_normal((n, spec.p)) @ root.T
    Z = rng.random((n, spec.R))
    betas = _beta_matrix(Z, spec.p, spec.beta0_raw)
    signal = betas[:, 0] + np.sum(betas[:, 1:] * X, axis=1)
    y = signal + spec.noise_sd * rng.standard_normal(n)
    return Dataset(X=X, Z=Z, y=y, beta_true=betas)


def generate(spec: DgpSpec, rng) -> tuple[Dataset, Dataset]:
    """Draw (train, test) datasets; both carry the true coefficient
    evaluations for downstream scoring (the test modifiers double as the
    evaluation grid)."""
    rng = as_generator(rng)
    train = _sample_dataset(spec, spec.n_train, rng)
    test = _sample_dataset(spec, spec.n_test, rng)
    return train, test


def augment_noise_covariates(dataset: Dataset, k: int, rng) -> Dataset:
    """Append k standard-normal noise covariates (named noise_*); the
    response is untouched, so their true coefficients are null."""
    if k < 0:
        raise DataError("k must be nonnegative")
    if k == 0:
        return dataset
    rng = as_generator(rng)
    noise = rng.standard_normal((dataset.n, k))
    beta_true = dataset.beta_true
    if beta_true is not None:
        beta_true = np.hstack([beta_true, np.zeros((dataset.n, k))])
    return Dataset(
        X=np.hstack([dataset.X, noise]),
        Z=dataset.Z,
        y=dataset.y,
        beta_true=beta_true,
        x_names=list(dataset.x_names) + [f"noise_{i + 1}" for i in range(k)],
        z_names=list(dataset.z_names),
    )


def save_csv(dataset: Dataset, path) -> None:
    """Write a dataset in the documented schema with full float precision
    (values round-trip bit-exactly through load_csv)."""
    path = Path(path)
    cols = ["y"] + [f"x_{j + 1}" for j in range(dataset.p)] + [f"z_{r + 1}" for r in range(dataset.R)]
    mats = [dataset.y[:, None], dataset.X, dataset.Z]
    if dataset.beta_true is not None:
        cols += [f"beta_true_{j}" for j in range(dataset.p + 1)]
        mats.append(dataset.beta_true)
    body = np.hstack(mats)
    with open(path, "w", newline="") as f:
        f.write(",".join(cols) + "\n")
        for row in body:
            f.write(",".join(repr(float(v)) for v in row) + "\n")


def load_csv(path, rescale: bool = False) -> tuple[Dataset, dict]:
    """Parse a dataset CSV, validating the schema cell by cell.

    With ``rescale`` each z column is min-max mapped to [0,1]; the applied
    offsets/spans are echoed in the returned metadata so a fit is
    reproducible from its meta.json alone.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        rows = list(reader)
    if "y" not in header:
        raise DataError(f"{path}: missing required column 'y'")
    x_cols = sorted((h for h in header if h.startswith("x_")), key=lambda h: int(h[2:]))
    z_cols = sorted((h for h in header if h.startswith("z_")), key=lambda h: int(h[2:]))
    b_cols = sorted((h for h in header if h.startswith("beta_true_")), key=lambda h: int(h[10:]))
    if not x_cols:
        raise DataError(f"{path}: no covariate columns (x_1..x_p) found")
    if not z_cols:
        raise DataError(f"{path}: no modifier columns (z_1..z_R) found")
    expected_x = [f"x_{j + 1}" for j in range(len(x_cols))]
    expected_z = [f"z_{r + 1}" for r in range(len(z_cols))]
    if x_cols != expected_x or z_cols != expected_z:
        raise DataError(f"{path}: covariate/modifier columns must be contiguous 1..k")
    col_index = {h: i for i, h in enumerate(header)}

    def parse(row_num: int, row: list[str], col: str) -> float:
        try:
            v = float(row[col_index[col]])
        except (ValueError, IndexError):
            raise DataError(
                f"{path}: row {row_num}, column {col!r}: non-numeric cell "
                f"{row[col_index[col]] if col_index[col] < len(row) else '<missing>'!r}"
            ) from None
        if math.isnan(v) or math.isinf(v):
            raise DataError(f"{path}: row {row_num}, column {col!r}: non-finite value")
        return v

    n = len(rows)
    if n == 0:
        raise DataError(f"{path}: no data rows")
    y = np.empty(n)
    X = np.empty((n, len(x_cols)))
    Z = np.empty((n, len(z_cols)))
    B = np.empty((n, len(b_cols))) if b_cols else None
    for i, row in enumerate(rows):
        row_num = i + 2  # 1-based, after the header
        y[i] = parse(row_num, row, "y")
        for j, c in enumerate(x_cols):
            X[i, j] = parse(row_num, row, c)
        for r, c in enumerate(z_cols):
            Z[i, r] = parse(row_num, row, c)
        if B is not None:
            for b, c in enumerate(b_cols):
                B[i, b] = parse(row_num, row, c)

    meta = {"rescaled": bool(rescale), "z_offset": None, "z_span": None}
    if rescale:
        lo = Z.min(axis=0)
        hi = Z.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        Z = (Z - lo) / span
        meta["z_offset"] = lo.tolist()
        meta["z_span"] = span.tolist()
    else:
        bad = np.argwhere((Z < 0) | (Z > 1))
        if bad.size:
            i, r = bad[0]
            raise DataError(
                f"{path}: row {i + 2}, column 'z_{r + 1}': value {Z[i, r]} outside [0,1] "
                f"(pass rescale to min-max map modifiers)"
            )
    dataset = Dataset(X=X, Z=Z, y=y, beta_true=B, x_names=x_cols, z_names=z_cols)
    return dataset, meta


def make_spec(experiment: str, **overrides) -> DgpSpec:
    if experiment == "exp1":
        return DgpSpec.exp1(**overrides)
    if experiment == "exp2":
        return DgpSpec.exp2(**overrides)
    return DgpSpec(experiment="custom", **overrides)
