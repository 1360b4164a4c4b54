"""Prior blocks: tree-topology prior, split-variable Dirichlet hierarchy,
global-local leaf shrinkage, and the conjugate inverse-gamma variances.

Every log density here is the single source of truth for its block; the
Gibbs updates and the prior simulators both go through these definitions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import special

from .samplers import as_generator, draw_dirichlet, draw_half_cauchy, draw_inv_gamma


class ConfigurationError(ValueError):
    """Raised for prior/hyperparameter settings that are inconsistent."""


QUADRATIC = "quadratic"
EXPONENTIAL = "exponential"


@dataclass(frozen=True)
class TreePriorConfig:
    """Depth-decaying branching prior on tree topologies.

    ``quadratic``: a depth-d node splits with probability base/(1+d)^2.
    ``exponential``: it splits with probability gamma^d (so the root always
    splits and a bare stump carries zero prior mass); this variant exists
    for theory-mode experiments.
    ``max_depth`` (optional) forces the split probability to zero at and
    beyond the given depth; used by enumerable-posterior tests.
    """

    variant: str = QUADRATIC
    base: float = 0.95
    gamma: float = 0.25
    max_depth: int | None = None

    def __post_init__(self):
        if self.variant not in (QUADRATIC, EXPONENTIAL):
            raise ConfigurationError(f"unknown tree prior variant {self.variant!r}")
        if self.variant == QUADRATIC and not 0.0 < self.base < 1.0:
            raise ConfigurationError(f"quadratic base must be in (0,1), got {self.base}")
        if self.variant == EXPONENTIAL and not 0.0 < self.gamma < 0.5:
            raise ConfigurationError(f"exponential gamma must be in (0, 1/2), got {self.gamma}")
        if self.max_depth is not None and self.max_depth < 0:
            raise ConfigurationError("max_depth must be nonnegative")

    def split_prob(self, depth: int) -> float:
        """Probability that a node at the given depth is internal."""
        if depth < 0:
            raise ConfigurationError(f"negative depth {depth}")
        if self.max_depth is not None and depth >= self.max_depth:
            return 0.0
        if self.variant == QUADRATIC:
            return self.base / (1.0 + depth) ** 2
        return self.gamma ** depth


@dataclass
class SplitProbState:
    """Per-ensemble split-variable probabilities and their concentrations."""

    theta: np.ndarray  # (n_ensembles, R), rows sum to 1
    eta: np.ndarray    # (n_ensembles,), positive

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        self.eta = np.asarray(self.eta, dtype=np.float64)
        if self.theta.ndim != 2:
            raise ConfigurationError("theta must be (n_ensembles, R)")
        if self.eta.shape != (self.theta.shape[0],):
            raise ConfigurationError("eta must have one entry per ensemble")
        self.validate()

    def validate(self):
        if np.any(self.theta <= 0):
            raise ConfigurationError("theta entries must be strictly positive")
        if np.max(np.abs(self.theta.sum(axis=1) - 1.0)) > 1e-12:
            raise ConfigurationError("theta rows must sum to 1 within 1e-12")
        if np.any(self.eta <= 0) or not np.all(np.isfinite(self.eta)):
            raise ConfigurationError("eta must be positive and finite")

    @classmethod
    def uniform(cls, n_ensembles: int, n_modifiers: int) -> "SplitProbState":
        theta = np.full((n_ensembles, n_modifiers), 1.0 / n_modifiers)
        eta = np.full(n_ensembles, float(n_modifiers))
        return cls(theta, eta)


# Scales are floored at this value inside log-space samplers so densities
# stay finite; see the shrinkage-update code.
SCALE_FLOOR = 1e-12


@dataclass
class ShrinkageState:
    """Global-local shrinkage block: local scales, global scale, slab, noise."""

    lam: np.ndarray   # (n_ensembles,) local scales, > 0
    tau: float        # global scale, > 0
    c2: float         # slab variance, > 0
    sigma2: float     # noise variance, > 0

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=np.float64)
        self.validate()

    def validate(self):
        for name, v in (("tau", self.tau), ("c2", self.c2), ("sigma2", self.sigma2)):
            if not (v > 0 and math.isfinite(v)):
                raise ConfigurationError(f"{name} must be positive and finite, got {v}")
        if np.any(self.lam <= 0) or not np.all(np.isfinite(self.lam)):
            raise ConfigurationError("local scales must be positive and finite")

    def s2(self) -> np.ndarray:
        """Regularized variances s_j^2 = tau^2 lam_j^2 c^2 / (c^2 + tau^2 lam_j^2)."""
        return regularized_scale2(self.lam, self.tau, self.c2)


def regularized_scale2(lam, tau: float, c2: float):
    a = (tau * np.asarray(lam, dtype=np.float64)) ** 2
    return a * c2 / (c2 + a)


# Per-leaf variance conventions.  "s2": every jump has prior variance
# s_j^2, the convention the sampler equations are written in (the summed
# coefficient then has marginal variance M_j * s_j^2).  "s2_over_m": jumps
# have variance s_j^2 / M_j so the coefficient's marginal variance is s_j^2.
LEAF_VARIANCE_CONVENTIONS = ("s2", "s2_over_m")


def leaf_scale(j: int, shrinkage: ShrinkageState, m_trees: int,
               convention: str = "s2") -> float:
    """Per-leaf prior variance for ensemble j under the chosen convention."""
    if m_trees < 1:
        raise ConfigurationError(f"ensemble size must be >= 1, got {m_trees}")
    if convention not in LEAF_VARIANCE_CONVENTIONS:
        raise ConfigurationError(f"unknown leaf variance convention {convention!r}")
    s2 = float(regularized_scale2(shrinkage.lam[j], shrinkage.tau, shrinkage.c2))
    return s2 / m_trees if convention == "s2_over_m" else s2


def tree_log_prior(tree, config: TreePriorConfig) -> float:
    """Log topology mass under the branching prior.

    Sums log p_split(depth) over internal nodes and log(1 - p_split(depth))
    over leaves.  Decision-rule probabilities are deliberately excluded:
    they cancel against the proposal kernel in the MH ratio.  Returns -inf
    for topologies with zero mass (e.g. a leaf at a depth whose split
    probability is exactly 1).
    """
    total = 0.0
    for node_id in tree.node_ids():
        p = config.split_prob(int(tree.depth[node_id]))
        if tree.is_leaf(node_id):
            if p >= 1.0:
                return -math.inf
            total += math.log1p(-p)
        else:
            if p <= 0.0:
                return -math.inf
            total += math.log(p)
    return total


def log_half_cauchy(x: float, scale: float) -> float:
    """Log density of the half-Cauchy C+(0, scale) at x > 0."""
    if scale <= 0:
        raise ConfigurationError(f"half-Cauchy scale must be positive, got {scale}")
    if x <= 0:
        raise ValueError(f"half-Cauchy support is x > 0, got {x}")
    return math.log(2.0 / math.pi) - math.log(scale) - math.log1p((x / scale) ** 2)


def log_inv_gamma(x: float, shape: float, rate: float) -> float:
    """Log density of IG(shape, rate) at x > 0."""
    if shape <= 0 or rate <= 0:
        raise ConfigurationError(f"IG parameters must be positive, got {shape}, {rate}")
    if x <= 0:
        raise ValueError(f"inverse-gamma support is x > 0, got {x}")
    return shape * math.log(rate) - special.gammaln(shape) - (shape + 1.0) * math.log(x) - rate / x


def log_beta_density(u: float, a: float, b: float) -> float:
    if not 0.0 < u < 1.0:
        return -math.inf
    return (
        (a - 1.0) * math.log(u)
        + (b - 1.0) * math.log1p(-u)
        - special.betaln(a, b)
    )


# Beta(1, 0.5) hyperprior on u_j = eta_j / (eta_j + R).
ETA_BETA_A = 1.0
ETA_BETA_B = 0.5


def log_eta_prior(eta: float, n_modifiers: int) -> float:
    """Prior density of a concentration eta_j, induced from the Beta prior
    on u = eta/(eta+R) through the change of variables (du/deta = R/(eta+R)^2).
    """
    if eta <= 0:
        return -math.inf
    r = float(n_modifiers)
    u = eta / (eta + r)
    return log_beta_density(u, ETA_BETA_A, ETA_BETA_B) + math.log(r) - 2.0 * math.log(eta + r)


def calibrate_noise_rate(y, nu: float) -> float:
    """Rate input for the noise prior: sigma^2 ~ IG(nu/2, nu*rate/2) with
    P(sigma < sd(y)) = 0.90.

    Uses the inverse upper incomplete gamma function, i.e. solves the IG CDF
    condition exactly; the quantile condition is monotone in the rate.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.size < 2:
        raise ConfigurationError("need at least two observations to calibrate the noise rate")
    sd = float(np.std(y, ddof=1))
    if not sd > 0:
        raise ConfigurationError("response is constant; cannot calibrate the noise scale")
    if nu <= 0:
        raise ConfigurationError(f"nu must be positive, got {nu}")
    # P(sigma^2 < q) = Q(a, b/q) for IG(a, b); want it equal to 0.90 at q = sd^2.
    a = nu / 2.0
    b = special.gammainccinv(a, 0.90) * sd * sd
    return 2.0 * b / nu


def default_tau0(p: int, n_obs: int, sd_y: float) -> float:
    """Default scale for the global-shrinkage prior:
    tau0 = p/(p - p0) * sd(y)/sqrt(N) with p0 = min(10, max(1, floor(p/4))).
    """
    if p < 2:
        raise ConfigurationError(f"default tau0 needs p >= 2, got {p}")
    if n_obs < 1:
        raise ConfigurationError(f"need N >= 1, got {n_obs}")
    if not sd_y > 0:
        raise ConfigurationError(f"sd(y) must be positive, got {sd_y}")
    p0 = min(10, max(1, p // 4))
    assert p - p0 > 0
    return p / (p - p0) * sd_y / math.sqrt(n_obs)


@dataclass(frozen=True)
class Hyperparameters:
    """Model and schedule hyperparameters with their default calibrations.

    ``noise_scale`` and ``tau0`` default to None and are filled from the
    data (`resolve`).  The chain schedule ships with the standard
    4 x 2000 / 400 setting.
    """

    m_trees: int = 50
    nu: float = 3.0
    noise_scale: float | None = None
    nu_c: float = 4.0
    s_c: float = 2.0
    tau0: float | None = None
    chains: int = 4
    iters: int = 2000
    burn: int = 400
    thin: int = 1
    beta_thin: int = 1
    tree_prior: TreePriorConfig = field(default_factory=TreePriorConfig)
    cutpoint_mode: str = "uniform"  # or "midpoints"
    slice_width: float = 1.0
    slice_max_stepout: int = 32
    eta_step: float = 1.0
    c2_update: str = "conjugate"  # or "slice-exact"
    shrinkage: str = "sparse"  # or "constant" (fixed leaf variance 1/(4M))
    leaf_variance: str = "s2"  # or "s2_over_m"
    check_interval: int = 200

    def __post_init__(self):
        if self.m_trees < 1:
            raise ConfigurationError(f"m_trees must be >= 1, got {self.m_trees}")
        if self.nu <= 0 or self.nu_c <= 0 or self.s_c <= 0:
            raise ConfigurationError("nu, nu_c, s_c must be positive")
        if self.noise_scale is not None and self.noise_scale <= 0:
            raise ConfigurationError("noise_scale must be positive")
        if self.tau0 is not None and self.tau0 <= 0:
            raise ConfigurationError("tau0 must be positive")
        if self.chains < 1 or self.iters < 1 or self.thin < 1 or self.beta_thin < 1:
            raise ConfigurationError("schedule counts must be positive")
        if not 0 <= self.burn < self.iters:
            raise ConfigurationError(f"burn must satisfy 0 <= burn < iters, got {self.burn} vs {self.iters}")
        if self.cutpoint_mode not in ("uniform", "midpoints"):
            raise ConfigurationError(f"unknown cutpoint mode {self.cutpoint_mode!r}")
        if self.c2_update not in ("conjugate", "slice-exact"):
            raise ConfigurationError(f"unknown c2 update mode {self.c2_update!r}")
        if self.shrinkage not in ("sparse", "constant"):
            raise ConfigurationError(f"unknown shrinkage mode {self.shrinkage!r}")
        if self.leaf_variance not in LEAF_VARIANCE_CONVENTIONS:
            raise ConfigurationError(f"unknown leaf variance convention {self.leaf_variance!r}")
        if self.check_interval < 1:
            raise ConfigurationError("check_interval must be >= 1")

    def resolve(self, y, p: int) -> "Hyperparameters":
        """Fill data-dependent defaults (noise rate, tau0) from the response."""
        y = np.asarray(y, dtype=np.float64)
        noise_scale = self.noise_scale
        if noise_scale is None:
            noise_scale = calibrate_noise_rate(y, self.nu)
        tau0 = self.tau0
        if tau0 is None:
            tau0 = default_tau0(p, y.size, float(np.std(y, ddof=1)))
        return replace(self, noise_scale=noise_scale, tau0=tau0)

    CONFIG_KEYS = (
        "m_trees", "nu", "noise_scale", "nu_c", "s_c", "tau0",
        "chains", "iters", "burn", "thin", "beta_thin",
        "cutpoint_mode", "slice_width", "slice_max_stepout", "eta_step",
        "c2_update", "shrinkage", "leaf_variance", "check_interval",
    )

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.CONFIG_KEYS}
        out["tree_prior"] = {
            "variant": self.tree_prior.variant,
            "base": self.tree_prior.base,
            "gamma": self.tree_prior.gamma,
            "max_depth": self.tree_prior.max_depth,
        }
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparameters":
        d = dict(d)
        unknown = set(d) - set(cls.CONFIG_KEYS) - {"tree_prior"}
        if unknown:
            raise ConfigurationError(f"unknown hyperparameter keys: {sorted(unknown)}")
        tp = d.pop("tree_prior", None)
        kwargs = dict(d)
        if tp is not None:
            kwargs["tree_prior"] = TreePriorConfig(**tp)
        return cls(**kwargs)


def sample_tree_topology(config: TreePriorConfig, theta, rng, cap: int | None = None):
    """Draw a tree from the branching prior (topology plus rules).

    Returns a DecisionTree with all leaf jumps set to zero; used by the
    prior simulators and the getting-it-right harness.
    """
    from .trees import DecisionTree

    rng = as_generator(rng)
    theta = np.asarray(theta, dtype=np.float64)
    tree = DecisionTree.stump(n_modifiers=theta.size, cap=cap)
    stack = [0]
    while stack:
        node = stack.pop()
        d = int(tree.depth[node])
        if rng.random() < config.split_prob(d):
            if tree.n_free() < 2:
                raise ConfigurationError(
                    "prior tree exceeded node capacity; increase cap for this prior"
                )
            axis = int(np.searchsorted(np.cumsum(theta), rng.random()))
            axis = min(axis, theta.size - 1)
            left, right = tree.grow(node, axis, float(rng.random()))
            stack.append(right)
            stack.append(left)
    return tree


def sample_shrinkage_from_prior(n_ensembles: int, tau0: float, nu_c: float, s_c: float,
                                nu: float, noise_scale: float, rng) -> ShrinkageState:
    rng = as_generator(rng)
    lam = np.array([draw_half_cauchy(1.0, rng) for _ in range(n_ensembles)])
    tau = draw_half_cauchy(tau0, rng)
    c2 = draw_inv_gamma(nu_c / 2.0, nu_c * s_c * s_c / 2.0, rng)
    sigma2 = draw_inv_gamma(nu / 2.0, nu * noise_scale / 2.0, rng)
    return ShrinkageState(lam=lam, tau=tau, c2=c2, sigma2=sigma2)


def sample_split_probs_from_prior(n_ensembles: int, n_modifiers: int, rng) -> SplitProbState:
    rng = as_generator(rng)
    eta = np.empty(n_ensembles)
    theta = np.empty((n_ensembles, n_modifiers))
    for j in range(n_ensembles):
        u = rng.beta(ETA_BETA_A, ETA_BETA_B)
        u = min(max(u, 1e-12), 1.0 - 1e-12)
        eta[j] = n_modifiers * u / (1.0 - u)
        theta[j] = draw_dirichlet(np.full(n_modifiers, eta[j] / n_modifiers), rng)
    return SplitProbState(theta=theta, eta=eta)
