"""Sparse varying-coefficient regression with Bayesian tree ensembles.

Fits y = beta_0(z) + sum_j beta_j(z) x_j + noise, where each coefficient
surface is a sum of regression trees over the effect modifiers z, with a
global-local shrinkage prior on the leaf jumps that switches entire
coefficients off, and a Dirichlet prior on split variables that selects the
modifiers that matter.
"""

__version__ = "0.1.0"

from .datagen import Dataset, DgpSpec, augment_noise_covariates, generate, load_csv, true_beta
from .gibbs import ChainOutput, GibbsSampler, Hyperparameters, run_chain
from .priors import ShrinkageState, SplitProbState, TreePriorConfig
from .samplers import RngStream, SliceConfig, slice_sample
from .summary import SummaryReport, coverage_and_mse, lambda_screen, modifier_report, summarize
from .trees import DecisionRule, DecisionTree, propose_grow, propose_prune, split_counts

__all__ = [
    "ChainOutput",
    "Dataset",
    "DecisionRule",
    "DecisionTree",
    "DgpSpec",
    "GibbsSampler",
    "Hyperparameters",
    "RngStream",
    "ShrinkageState",
    "SliceConfig",
    "SplitProbState",
    "SummaryReport",
    "TreePriorConfig",
    "augment_noise_covariates",
    "coverage_and_mse",
    "generate",
    "lambda_screen",
    "load_csv",
    "modifier_report",
    "propose_grow",
    "propose_prune",
    "run_chain",
    "slice_sample",
    "split_counts",
    "summarize",
    "true_beta",
]
