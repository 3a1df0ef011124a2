"""Quantiles and reproducible Gaussian noise.

Only two distributions matter here: the chi-squared quantile bounds joint
confidence regions when the measurement variance is known, and the Fisher
(F) quantile replaces it when the variance is estimated from residuals.
Both quantiles are computed by inverting the regularized incomplete
gamma/beta functions, which is exact to the accuracy of those inversions
(~1e-14), far below any tolerance used downstream.

Noise streams are built on NumPy's PCG64 generator seeded through
SeedSequence; substreams for Monte Carlo trials use spawn keys, so trial i
draws an independent, reproducible sequence regardless of how trials are
scheduled.  Normal variates come from NumPy's ziggurat implementation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import ConfigError

__all__ = [
    "chi2_quantile",
    "chi2_cdf",
    "f_quantile",
    "f_cdf",
    "NoiseStream",
    "gaussian_draws",
]


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 <= alpha < 1.0:
        raise ConfigError(f"confidence level must lie in [0, 1), got {alpha}")
    return alpha


def _check_dof(dof: int, name: str = "dof") -> int:
    if int(dof) != dof or dof < 1:
        raise ConfigError(f"{name} must be a positive integer, got {dof}")
    return int(dof)


def chi2_cdf(x: float, dof: int) -> float:
    """P[X <= x] for X ~ chi-squared with ``dof`` degrees of freedom."""
    dof = _check_dof(dof)
    if x <= 0.0:
        return 0.0
    return float(special.gammainc(dof / 2.0, x / 2.0))


def chi2_quantile(alpha: float, dof: int) -> float:
    """x such that the chi-squared CDF at x equals ``alpha``.

    For dof = 2 this reduces to the closed form -2*ln(1 - alpha), which the
    tests use as an independent oracle.
    """
    alpha = _check_alpha(alpha)
    dof = _check_dof(dof)
    if alpha == 0.0:
        return 0.0
    return float(2.0 * special.gammaincinv(dof / 2.0, alpha))


def f_cdf(x: float, dof1: int, dof2: int) -> float:
    """P[X <= x] for X ~ F(dof1, dof2)."""
    dof1 = _check_dof(dof1, "dof1")
    dof2 = _check_dof(dof2, "dof2")
    if x <= 0.0:
        return 0.0
    return float(special.betainc(dof1 / 2.0, dof2 / 2.0, dof1 * x / (dof1 * x + dof2)))


def f_quantile(alpha: float, dof1: int, dof2: int) -> float:
    """x such that the F(dof1, dof2) CDF at x equals ``alpha``.

    Inverts the regularized incomplete beta function, then maps the beta
    variate y back through x = dof2*y / (dof1*(1-y)).
    """
    alpha = _check_alpha(alpha)
    dof1 = _check_dof(dof1, "dof1")
    dof2 = _check_dof(dof2, "dof2")
    if alpha == 0.0:
        return 0.0
    y = float(special.betaincinv(dof1 / 2.0, dof2 / 2.0, alpha))
    return dof2 * y / (dof1 * (1.0 - y))


@dataclass(frozen=True)
class NoiseStream:
    """A seeded Gaussian noise source with per-output standard deviations.

    ``spawn`` is the SeedSequence spawn key; ``substream(i)`` appends i to
    it, which is how Monte Carlo trials get independent streams from one
    user-facing seed.
    """

    seed: int
    sigma: np.ndarray
    spawn: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "sigma", np.atleast_1d(np.asarray(self.sigma, dtype=float)))
        if np.any(self.sigma < 0.0):
            raise ConfigError("noise standard deviations must be >= 0")

    def substream(self, index: int) -> "NoiseStream":
        return NoiseStream(self.seed, self.sigma, self.spawn + (int(index),))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.spawn)
        return np.random.Generator(np.random.PCG64(ss))


def gaussian_draws(stream: NoiseStream, count: int) -> np.ndarray:
    """``count`` i.i.d. N(0, sigma^2) draws per output, shape (count, n_y).

    Same stream -> bit-identical draws; sigma = 0 gives exact zeros.
    """
    if count < 0:
        raise ConfigError("draw count must be >= 0")
    rng = stream.generator()
    z = rng.standard_normal(size=(int(count), stream.sigma.size))
    return z * stream.sigma[None, :]
