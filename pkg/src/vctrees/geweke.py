"""Getting-it-right harness: joint prior/posterior simulation consistency.

The successive-conditional simulator alternates one full Gibbs sweep with a
redraw of the data given the parameters.  If every conditional update is
correct, the parameter marginals it produces match direct prior simulation;
comparing the two validates all the conditionals jointly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gibbs import GibbsSampler
from .priors import (
    Hyperparameters,
    TreePriorConfig,
    sample_shrinkage_from_prior,
    sample_split_probs_from_prior,
    sample_tree_topology,
)
from .samplers import as_generator


@dataclass(frozen=True)
class GewekeConfig:
    """Tiny-model settings for the joint test (kept small so hundreds of
    thousands of cycles run in minutes)."""

    n_obs: int = 20
    p: int = 2
    R: int = 2
    m_trees: int = 3
    nu: float = 3.0
    noise_scale: float = 1.0
    nu_c: float = 4.0
    s_c: float = 2.0
    tau0: float = 1.0
    tree_prior: TreePriorConfig = field(default_factory=TreePriorConfig)
    c2_update: str = "conjugate"

    def hyperparameters(self) -> Hyperparameters:
        # iters/burn are irrelevant here; the harness drives sweeps itself
        return Hyperparameters(
            m_trees=self.m_trees, nu=self.nu, noise_scale=self.noise_scale,
            nu_c=self.nu_c, s_c=self.s_c, tau0=self.tau0, iters=2, burn=0,
            tree_prior=self.tree_prior, c2_update=self.c2_update,
            check_interval=10_000,
        )


FUNCTIONAL_NAMES = ("sigma2", "tau", "c2", "lambda", "total_leaves")


def _draw_prior_params(cfg: GewekeConfig, rng):
    n_ens = cfg.p + 1
    split = sample_split_probs_from_prior(n_ens, cfg.R, rng)
    shrink = sample_shrinkage_from_prior(
        n_ens, cfg.tau0, cfg.nu_c, cfg.s_c, cfg.nu, cfg.noise_scale, rng
    )
    trees = []
    for j in range(n_ens):
        ens = [sample_tree_topology(cfg.tree_prior, split.theta[j], rng) for _ in range(cfg.m_trees)]
        trees.append(ens)
    return split, shrink, trees


def prior_functionals(cfg: GewekeConfig, n_draws: int, rng) -> dict[str, np.ndarray]:
    """Direct prior simulation of the compared marginals."""
    rng = as_generator(rng)
    out = {
        "sigma2": np.empty(n_draws),
        "tau": np.empty(n_draws),
        "c2": np.empty(n_draws),
        "lambda": np.empty((n_draws, cfg.p + 1)),
        "total_leaves": np.empty(n_draws, dtype=np.int64),
    }
    for k in range(n_draws):
        _, shrink, trees = _draw_prior_params(cfg, rng)
        out["sigma2"][k] = shrink.sigma2
        out["tau"][k] = shrink.tau
        out["c2"][k] = shrink.c2
        out["lambda"][k] = shrink.lam
        out["total_leaves"][k] = sum(t.n_leaves() for ens in trees for t in ens)
    return out


def successive_conditional(cfg: GewekeConfig, cycles: int, rng, thin: int = 1,
                           X=None, Z=None) -> dict[str, np.ndarray]:
    """Run the alternating (sweep, redraw-data) chain and record the same
    marginals as `prior_functionals`.

    The design (X, Z) is held fixed; the initial state is an exact prior
    draw, so the chain is stationary from cycle 0.
    """
    rng = as_generator(rng)
    if X is None:
        X = rng.standard_normal((cfg.n_obs, cfg.p))
    if Z is None:
        Z = rng.random((cfg.n_obs, cfg.R))
    y0 = np.zeros(cfg.n_obs)
    sampler = GibbsSampler(X, Z, y0, cfg.hyperparameters())
    state = sampler.state

    split, shrink, trees = _draw_prior_params(cfg, rng)
    state.theta[:] = split.theta
    state.eta[:] = split.eta
    state.lam[:] = shrink.lam
    state.tau = shrink.tau
    state.c2 = shrink.c2
    state.sigma2 = shrink.sigma2
    v = state.leaf_variances()
    for j, ens in enumerate(trees):
        for m, tree in enumerate(ens):
            sd = np.sqrt(v[j])
            for leaf in tree.leaf_ids():
                tree.mu[leaf] = sd * rng.standard_normal()
            state.set_tree(j, m, tree)

    def redraw_data():
        fit = state.y - state.resid
        state.set_response(fit + np.sqrt(state.sigma2) * rng.standard_normal(cfg.n_obs))

    redraw_data()

    kept = (cycles + thin - 1) // thin
    out = {
        "sigma2": np.empty(kept),
        "tau": np.empty(kept),
        "c2": np.empty(kept),
        "lambda": np.empty((kept, cfg.p + 1)),
        "total_leaves": np.empty(kept, dtype=np.int64),
    }
    k = 0
    for cycle in range(cycles):
        sampler.sweep(rng)
        redraw_data()
        if cycle % thin == 0:
            _, leaves = state.ensemble_sums()
            out["sigma2"][k] = state.sigma2
            out["tau"][k] = state.tau
            out["c2"][k] = state.c2
            out["lambda"][k] = state.lam
            out["total_leaves"][k] = int(leaves.sum())
            k += 1
    return out
