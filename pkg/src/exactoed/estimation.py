"""Least-squares objectives, Fisher information, and confidence regions.

Two noise regimes drive everything:

* ``KnownSigma``: the weighted objective J_w(p) = sum w_i (y - yhat)^2 with
  w_i = 1/sigma_i^2, and the exact joint confidence region
  {p : J_w(p) - J_w(p_hat) <= chi2_quantile(alpha, n_p)}.
* ``UnknownVariance``: the unweighted objective J(p), variance estimated
  from residuals, and the region
  {p : J(p) - J(p_hat) <= n_p * s^2 * f_quantile(alpha, n_p, N - n_p)}.

At *design time* measurements are synthetic (y = yhat(p_hat)), so residuals
vanish and the sample variance s^2 is undefined; the convention used
throughout is to budget s^2 at the anticipated noise level sigma_design^2.
That constant is carried on ``UnknownVariance`` so every consumer applies
the same rule.

``ConfidenceRegionSpec`` packages one region for the geometry layer: the
only queries it needs are the excess residual J(p) - J(p_hat) - c (scalar
and batched) and its gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Union

import numpy as np

from .errors import ConfigError, SolverFailure
from .models import ModelSpec, evaluate_model, param_jacobian
from .stats import chi2_quantile, f_quantile

__all__ = [
    "KnownSigma",
    "UnknownVariance",
    "Dataset",
    "FisherInformation",
    "VarianceEstimate",
    "ConfidenceRegionSpec",
    "Membership",
    "LinearizedRegion",
    "residual_objective",
    "residual_gradient",
    "fisher_information",
    "variance_estimate",
    "exact_cr_threshold",
    "cr_membership",
    "linearized_cr",
    "least_squares_fit",
    "default_search_box",
    "design_crspec",
]

# excess <= MEMBERSHIP_RTOL * max(1, c) still counts as inside, absorbing
# solver-level noise on boundary points
MEMBERSHIP_RTOL = 1e-9


@dataclass(frozen=True)
class KnownSigma:
    """Per-output measurement standard deviations, all > 0."""

    sigma: np.ndarray

    def __post_init__(self):
        sig = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        if np.any(sig <= 0.0) or not np.all(np.isfinite(sig)):
            raise ConfigError("known sigma must be finite and > 0")
        object.__setattr__(self, "sigma", sig)


@dataclass(frozen=True)
class UnknownVariance:
    """Variance estimated from residuals; sigma_design is the planning value.

    sigma_design feeds two places: the design-time stand-in s^2 :=
    sigma_design^2 for the F-based threshold, and the noise simulator in
    robustness studies.
    """

    sigma_design: float

    def __post_init__(self):
        if not np.isfinite(self.sigma_design) or self.sigma_design < 0.0:
            raise ConfigError("sigma_design must be finite and >= 0")


NoiseSpec = Union[KnownSigma, UnknownVariance]


@dataclass(frozen=True)
class Dataset:
    """Ordered samples (u_tau, y_m(tau)); scalar-input models use U of shape (N,)."""

    U: np.ndarray  # (N,) sample inputs
    Y: np.ndarray  # (N, n_y) measurements
    noise: NoiseSpec

    def __post_init__(self):
        # copy: a frozen value object must not alias caller arrays that may mutate
        U = np.array(self.U, dtype=float, copy=True).reshape(-1)
        Y = np.array(self.Y, dtype=float, copy=True)
        if Y.ndim == 1:
            Y = Y[:, None]
        if U.size < 1:
            raise ConfigError("dataset needs at least one sample")
        if Y.shape[0] != U.size:
            raise ConfigError(f"dataset has {U.size} inputs but {Y.shape[0]} measurements")
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "Y", Y)

    @property
    def N(self) -> int:
        return self.U.size


@dataclass(frozen=True)
class FisherInformation:
    matrix: np.ndarray
    design: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.matrix, dtype=float)
        scale = max(1.0, float(np.abs(M).max()))
        if not np.allclose(M, M.T, rtol=0.0, atol=1e-12 * scale):
            raise ValueError("Fisher information must be symmetric")
        eigs = np.linalg.eigvalsh(M)
        if eigs.min() < -1e-10:
            raise ValueError(f"Fisher information not PSD (min eigenvalue {eigs.min():.3e})")
        object.__setattr__(self, "matrix", 0.5 * (M + M.T))
        object.__setattr__(self, "design", np.asarray(self.design, dtype=float).copy())


@dataclass(frozen=True)
class VarianceEstimate:
    s2: float
    N: int
    n_p: int


class Membership(NamedTuple):
    member: bool
    excess: float


def _weights(model: ModelSpec, noise: NoiseSpec, weighted: bool) -> np.ndarray:
    """Per-output weights (n_y,): 1/sigma^2 when weighting, else ones."""
    if weighted:
        if not isinstance(noise, KnownSigma):
            raise ConfigError("weighted objective requires known sigma")
        sig = np.broadcast_to(noise.sigma, (model.n_y,))
        return 1.0 / sig**2
    return np.ones(model.n_y)


def residual_objective(model: ModelSpec, dataset: Dataset, p, weighted: bool) -> float:
    """J_w(p) (weighted) or J(p) (unweighted) over the dataset."""
    w = _weights(model, dataset.noise, weighted)
    total = 0.0
    for tau in range(dataset.N):
        r = dataset.Y[tau] - evaluate_model(model, p, dataset.U[tau])
        total += float(np.dot(w, r * r))
    return total


def residual_gradient(model: ModelSpec, dataset: Dataset, p, weighted: bool) -> np.ndarray:
    """Gradient of the residual objective: 2 * sum w_i (yhat_i - y_i) dyhat_i/dp."""
    w = _weights(model, dataset.noise, weighted)
    p = np.asarray(p, dtype=float).reshape(-1)
    g = np.zeros(model.n_p)
    # direct model calls (no per-call validation): this sits inside solver loops
    for tau in range(dataset.N):
        y_hat = np.atleast_1d(np.asarray(model.eval(p, dataset.U[tau]), dtype=float))
        if model.param_sensitivity is not None:
            S = np.atleast_2d(np.asarray(model.param_sensitivity(p, dataset.U[tau]), dtype=float))
        else:
            S = param_jacobian(model, p, dataset.U[tau])
        g += 2.0 * (w * (y_hat - dataset.Y[tau])) @ S
    return g


def residual_objective_batch(model: ModelSpec, dataset: Dataset, P, weighted: bool) -> np.ndarray:
    """Vectorized residual objective over a parameter batch P (m, n_p)."""
    P = np.asarray(P, dtype=float)
    if model.batch_sse is not None and model.n_y == 1:
        w_out = _weights(model, dataset.noise, weighted)
        w = np.full(dataset.N, w_out[0])
        return np.asarray(model.batch_sse(P, dataset.U, dataset.Y[:, 0], w))
    return np.array([residual_objective(model, dataset, P[i], weighted) for i in range(P.shape[0])])


def fisher_information(model: ModelSpec, p, U, sigma) -> FisherInformation:
    """FIM = sum_tau S(u_tau)^T diag(sigma^-2) S(u_tau) with S the parameter Jacobian."""
    U = np.asarray(U, dtype=float).reshape(-1)
    sig = np.broadcast_to(np.atleast_1d(np.asarray(sigma, dtype=float)), (model.n_y,))
    if np.any(sig <= 0.0):
        raise ConfigError("fisher_information requires sigma > 0")
    w = 1.0 / sig**2
    M = np.zeros((model.n_p, model.n_p))
    for u in U:
        S = param_jacobian(model, p, u)
        M += S.T @ (w[:, None] * S)
    return FisherInformation(matrix=M, design=U)


def variance_estimate(J_hat: float, N: int, n_p: int) -> VarianceEstimate:
    if N <= n_p:
        raise ConfigError(f"variance estimate needs N > n_p (got N={N}, n_p={n_p})")
    if J_hat < 0.0:
        raise ConfigError("residual objective value cannot be negative")
    return VarianceEstimate(s2=J_hat / (N - n_p), N=int(N), n_p=int(n_p))


def exact_cr_threshold(noise: NoiseSpec, alpha: float, n_p: int, N: int, s2: Optional[float] = None) -> float:
    """Right-hand constant c of the exact-region inequality J(p) - J(p_hat) <= c."""
    if isinstance(noise, KnownSigma):
        return chi2_quantile(alpha, n_p)
    if N <= n_p:
        raise ConfigError(f"unknown-variance threshold needs N > n_p (got N={N}, n_p={n_p})")
    if s2 is None:
        s2 = noise.sigma_design**2
    return n_p * s2 * f_quantile(alpha, n_p, N - n_p)


@dataclass(frozen=True)
class ConfidenceRegionSpec:
    """Everything needed to answer 'is p inside the exact region?'.

    The membership test is excess(p) := J(p) - J(p_hat) - c <= 0, where J is
    the weighted or unweighted objective as dictated by the noise kind, and
    J(p_hat) is cached at construction (nonzero for noisy datasets).
    """

    model: ModelSpec
    dataset: Dataset
    p_hat: np.ndarray
    alpha: float
    threshold: float
    weighted: bool
    search_box: np.ndarray  # (n_p, 2)
    j_hat: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        p_hat = np.asarray(self.p_hat, dtype=float).reshape(-1)
        if p_hat.size != self.model.n_p:
            raise ConfigError("p_hat dimension does not match the model")
        box = np.asarray(self.search_box, dtype=float).reshape(self.model.n_p, 2)
        if np.any(box[:, 0] >= box[:, 1]):
            raise ConfigError("search box must have lo < hi per parameter")
        if np.any(p_hat < box[:, 0]) or np.any(p_hat > box[:, 1]):
            raise ConfigError("p_hat must lie inside the search box")
        if self.threshold < 0.0:
            raise ConfigError("threshold must be >= 0")
        object.__setattr__(self, "p_hat", p_hat)
        object.__setattr__(self, "search_box", box)
        if self.j_hat is None:
            object.__setattr__(
                self, "j_hat", residual_objective(self.model, self.dataset, p_hat, self.weighted)
            )

    @property
    def n_p(self) -> int:
        return self.model.n_p

    def objective(self, p) -> float:
        # single-point queries ride the batched kernel when available; solver
        # loops hit this path millions of times
        if self.model.batch_sse is not None and self.model.n_y == 1:
            P = np.asarray(p, dtype=float).reshape(1, -1)
            return float(residual_objective_batch(self.model, self.dataset, P, self.weighted)[0])
        return residual_objective(self.model, self.dataset, p, self.weighted)

    def excess(self, p) -> float:
        return self.objective(p) - self.j_hat - self.threshold

    def excess_gradient(self, p) -> np.ndarray:
        return residual_gradient(self.model, self.dataset, p, self.weighted)

    def excess_batch(self, P) -> np.ndarray:
        J = residual_objective_batch(self.model, self.dataset, P, self.weighted)
        return J - self.j_hat - self.threshold

    def membership_batch(self, P) -> np.ndarray:
        return self.excess_batch(P) <= MEMBERSHIP_RTOL * max(1.0, self.threshold)


def cr_membership(crspec: ConfidenceRegionSpec, p) -> Membership:
    excess = crspec.excess(p)
    return Membership(member=bool(excess <= MEMBERSHIP_RTOL * max(1.0, crspec.threshold)), excess=excess)


@dataclass(frozen=True)
class LinearizedRegion:
    """Ellipsoid {p : (p - p_hat)^T M (p - p_hat) <= c} from the local linearization."""

    M: np.ndarray
    c: float
    p_hat: np.ndarray
    bounded: bool

    def membership(self, p) -> bool:
        d = np.asarray(p, dtype=float) - self.p_hat
        return float(d @ self.M @ d) <= self.c * (1.0 + 1e-12) + 1e-15

    def quadratic(self, p) -> float:
        d = np.asarray(p, dtype=float) - self.p_hat
        return float(d @ self.M @ d)


def linearized_cr(model: ModelSpec, p_hat, U, noise: NoiseSpec, alpha: float, N: Optional[int] = None) -> LinearizedRegion:
    """The classical ellipsoidal region at the design U.

    Known sigma: M is the weighted FIM and c the chi-squared quantile.
    Unknown variance: M is the unweighted sensitivity Gramian and
    c = n_p * s^2 * F-quantile with the design-time s^2 convention.
    """
    U = np.asarray(U, dtype=float).reshape(-1)
    N = U.size if N is None else int(N)
    p_hat = np.asarray(p_hat, dtype=float).reshape(-1)
    if isinstance(noise, KnownSigma):
        fim = fisher_information(model, p_hat, U, noise.sigma)
        M, c = fim.matrix, chi2_quantile(alpha, model.n_p)
    else:
        fim = fisher_information(model, p_hat, U, np.ones(model.n_y))
        M = fim.matrix
        c = exact_cr_threshold(noise, alpha, model.n_p, N)
    bounded = bool(np.linalg.cond(M) < 1e12)
    return LinearizedRegion(M=M, c=c, p_hat=p_hat, bounded=bounded)


def default_search_box(p_hat) -> np.ndarray:
    """Per-parameter interval [p/10, 10p] (orientation-safe for negative values)."""
    p_hat = np.asarray(p_hat, dtype=float).reshape(-1)
    lo = np.minimum(p_hat / 10.0, p_hat * 10.0)
    hi = np.maximum(p_hat / 10.0, p_hat * 10.0)
    degenerate = hi - lo < 1e-12
    lo[degenerate] -= 1.0
    hi[degenerate] += 1.0
    return np.column_stack([lo, hi])


def design_crspec(
    model: ModelSpec,
    p_hat,
    U,
    noise: NoiseSpec,
    alpha: float,
    search_box=None,
    y=None,
) -> ConfidenceRegionSpec:
    """The one shared construction path for exact regions.

    With ``y`` omitted the dataset is synthetic/noise-free (y = yhat(p_hat),
    so J(p_hat) = 0) — the design-time setting.  Robustness trials pass
    noisy measurements through ``y`` while keeping the same threshold
    constant, so design scoring and robustness scoring cannot diverge.
    """
    p_hat = np.asarray(p_hat, dtype=float).reshape(-1)
    U = np.asarray(U, dtype=float).reshape(-1)
    if y is None:
        y = np.array([evaluate_model(model, p_hat, u) for u in U])
    Y = np.asarray(y, dtype=float)
    dataset = Dataset(U=U, Y=Y, noise=noise)
    weighted = isinstance(noise, KnownSigma)
    c = exact_cr_threshold(noise, alpha, model.n_p, dataset.N)
    box = default_search_box(p_hat) if search_box is None else np.asarray(search_box, dtype=float)
    return ConfidenceRegionSpec(
        model=model,
        dataset=dataset,
        p_hat=p_hat,
        alpha=alpha,
        threshold=c,
        weighted=weighted,
        search_box=box,
    )


def least_squares_fit(model: ModelSpec, dataset: Dataset, p0, solver_settings=None) -> np.ndarray:
    """Fit p by minimizing the applicable residual objective with multistart."""
    from . import nlp  # local import: nlp is a leaf module, estimation is not

    p0 = np.asarray(p0, dtype=float).reshape(-1)
    weighted = isinstance(dataset.noise, KnownSigma)
    settings = dict(solver_settings or {})
    box = np.asarray(settings.pop("search_box", default_search_box(p0)), dtype=float)

    problem = nlp.NlpProblem(
        n=model.n_p,
        objective=lambda p: residual_objective(model, dataset, p, weighted),
        gradient=lambda p: residual_gradient(model, dataset, p, weighted),
        lower=box[:, 0],
        upper=box[:, 1],
        sense="min",
    )
    best, pool = nlp.solve_multistart(
        problem,
        box,
        n_starts=int(settings.pop("n_starts", 16)),
        seed=int(settings.pop("seed", 0)),
        x0=p0,
    )
    if best is None:
        raise SolverFailure("least-squares fit: no start converged")
    return best.x
