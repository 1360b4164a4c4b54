"""Reusable stochastic kernels: seeded RNG streams, a univariate slice
sampler, and draws from the standard distributions used by the Gibbs blocks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class SliceError(RuntimeError):
    """Raised when the slice kernel cannot find an acceptable point."""


class StateError(RuntimeError):
    """Raised when a sampler is started from an invalid state."""


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream, identified by (seed, stream id).

    Same (seed, stream, call sequence) gives an identical draw sequence on
    every platform; independent stream ids give statistically independent
    streams (one per chain).
    """

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(self.stream,)))


def as_generator(rng) -> np.random.Generator:
    """Accept an RngStream, a Generator, or a bare seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    return np.random.default_rng(rng)


@dataclass(frozen=True)
class SliceConfig:
    """Tuning for the stepping-out slice sampler.

    ``width`` is the initial bracket size, ``max_stepout`` the total number
    of width-sized expansions allowed (allocated randomly between the two
    ends, which keeps the limited step-out reversible), and ``domain``
    hard-bounds the support (use +/-inf for an unbounded side).
    """

    width: float = 1.0
    max_stepout: int = 32
    domain: tuple[float, float] = (-math.inf, math.inf)

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError(f"slice width must be positive, got {self.width}")
        if self.max_stepout < 0:
            raise ValueError("max_stepout must be nonnegative")


_MAX_SHRINK = 1000


def slice_sample(log_target: Callable[[float], float], x0: float, cfg: SliceConfig, rng) -> float:
    """One transition of the stepping-out / shrinkage slice sampler.

    Parameters
    ----------
    log_target : callable
        Log of the (unnormalized) target density.
    x0 : float
        Current point; ``log_target(x0)`` must be finite.
    cfg : SliceConfig
        Bracket width, step-out budget, and hard domain bounds.
    rng : RngStream | numpy.random.Generator | int

    Returns
    -------
    float
        The next state.  The invariant distribution is proportional to
        ``exp(log_target)`` on ``cfg.domain``; the returned point always
        satisfies ``log_target(x) > log_target(x0) + log(u)`` for the drawn
        level ``u``.

    Raises
    ------
    StateError
        If ``log_target(x0)`` is NaN or -inf (broken starting state).
    SliceError
        If the shrinkage loop fails to find a point after 1000 contractions,
        which indicates a broken target.
    """
    rng = as_generator(rng)
    lo, hi = cfg.domain

    def f(x: float) -> float:
        if x < lo or x > hi:
            return -math.inf
        v = log_target(x)
        return v if not math.isnan(v) else -math.inf

    f0 = log_target(x0)
    if math.isnan(f0) or f0 == -math.inf:
        raise StateError(f"log target not finite at starting point {x0!r}: {f0!r}")
    level = f0 - rng.exponential()

    u = rng.random()
    left = x0 - cfg.width * u
    right = left + cfg.width
    # Randomized allocation of the step-out budget (Neal 2003, Fig. 3).
    j = int(math.floor(cfg.max_stepout * rng.random()))
    k = cfg.max_stepout - 1 - j if cfg.max_stepout > 0 else 0
    while j > 0 and left > lo and f(left) > level:
        left -= cfg.width
        j -= 1
    while k > 0 and right < hi and f(right) > level:
        right += cfg.width
        k -= 1
    left = max(left, lo)
    right = min(right, hi)

    for _ in range(_MAX_SHRINK):
        x1 = left + rng.random() * (right - left)
        if f(x1) > level:
            return x1
        if x1 < x0:
            left = x1
        else:
            right = x1
    raise SliceError("slice shrinkage failed after 1000 contractions; target is likely broken")


def draw_dirichlet(alpha, rng) -> np.ndarray:
    """Dirichlet draw via normalized Gamma variables.

    Small concentrations are drawn on the log scale (Gamma(a+1) boost) so
    every component stays strictly positive in floating point, which the
    split-probability invariants require.
    """
    rng = as_generator(rng)
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim != 1 or alpha.size == 0 or np.any(alpha <= 0):
        raise ValueError(f"Dirichlet concentration must be a positive vector, got {alpha!r}")
    if np.all(alpha >= 0.1):
        g = rng.standard_gamma(alpha)
        total = g.sum()
        if total > 0 and np.all(g > 0):
            return g / total
    # log G = log Gamma(a+1) + log(U)/a, exact in distribution for any a > 0
    logg = np.log(rng.standard_gamma(alpha + 1.0)) + np.log(rng.random(alpha.size)) / alpha
    logg -= logg.max()
    g = np.exp(logg)
    g = np.maximum(g, np.finfo(np.float64).tiny)
    return g / g.sum()


def draw_inv_gamma(shape: float, rate: float, rng) -> float:
    """Draw from IG(shape, rate), density ~ x^{-(shape+1)} exp(-rate/x)."""
    if shape <= 0 or rate <= 0:
        raise ValueError(f"inverse-gamma parameters must be positive, got {shape}, {rate}")
    rng = as_generator(rng)
    return rate / rng.standard_gamma(shape)


def draw_normal(mean: float, var: float, rng) -> float:
    if var < 0:
        raise ValueError(f"variance must be nonnegative, got {var}")
    rng = as_generator(rng)
    return mean + math.sqrt(var) * rng.standard_normal()


def draw_multinomial_index(theta, rng) -> int:
    """Index draw from a probability vector (inverse-CDF scan)."""
    rng = as_generator(rng)
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 1 or theta.size == 0 or np.any(theta < 0):
        raise ValueError("theta must be a nonnegative vector")
    total = theta.sum()
    if not np.isfinite(total) or total <= 0:
        raise ValueError("theta must have positive finite mass")
    u = rng.random() * total
    acc = 0.0
    for i in range(theta.size):
        acc += theta[i]
        if u < acc:
            return i
    return int(theta.size - 1)


def draw_half_cauchy(scale: float, rng) -> float:
    if scale <= 0:
        raise ValueError(f"half-Cauchy scale must be positive, got {scale}")
    rng = as_generator(rng)
    return scale * abs(rng.standard_cauchy())
