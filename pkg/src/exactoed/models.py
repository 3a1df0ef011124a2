"""Static explicit models y = F(p, u) and their parameter sensitivities.

A model is an immutable spec bundling the forward map, an optional analytic
parameter Jacobian (finite differences otherwise), and optional batched
fast paths used by grid/ray evaluations.  All built-in models are scalar
input, scalar output (n_u = n_y = 1); ``u`` is passed as a plain float.

Built-ins
---------
bod            p1*(1 - exp(-p2*u)),                u in [0, 20]
second-order   step response of a damped 2nd-order system, u in [0, 10]
poly2          p1*u + p2*u^2 (linear in p),        u in [-1, 1]

The poly2 model is linear in the parameters, so its exact confidence
regions are exactly the classical ellipsoids — the degenerate case every
exact-region computation must collapse to.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from . import kernels
from .errors import ConfigError

__all__ = [
    "ModelSpec",
    "evaluate_model",
    "param_jacobian",
    "input_jacobian",
    "builtin_bod",
    "builtin_second_order",
    "builtin_poly2",
    "get_model",
]


@dataclass(frozen=True)
class ModelSpec:
    """Immutable model description.

    ``eval(p, u) -> (n_y,)`` and ``param_sensitivity(p, u) -> (n_y, n_p)``
    are pure functions.  ``batch_eval(P, u_vec) -> (m, N)`` and
    ``batch_sse(P, u_vec, y, w) -> (m,)`` are optional vectorized fast
    paths over parameter batches (only meaningful for n_y = 1); code that
    uses them must fall back to row-wise ``eval`` when they are None.
    """

    name: str
    n_p: int
    n_u: int
    n_y: int
    eval: Callable[[np.ndarray, float], np.ndarray]
    param_sensitivity: Optional[Callable[[np.ndarray, float], np.ndarray]] = None
    known_constants: Mapping[str, float] = field(default_factory=dict)
    input_bounds: tuple = (0.0, 1.0)
    batch_eval: Optional[Callable] = None
    batch_sse: Optional[Callable] = None
    input_sensitivity: Optional[Callable[[np.ndarray, float], np.ndarray]] = None


def _as_param(model: ModelSpec, p) -> np.ndarray:
    p = np.asarray(p, dtype=float).reshape(-1)
    if p.size != model.n_p:
        raise ConfigError(f"{model.name}: expected {model.n_p} parameters, got {p.size}")
    if not np.all(np.isfinite(p)):
        raise ValueError(f"{model.name}: non-finite parameter vector {p}")
    return p


def evaluate_model(model: ModelSpec, p, u) -> np.ndarray:
    """F(p, u) as a length-n_y vector, with dimension/finiteness checks."""
    p = _as_param(model, p)
    u = float(u)
    y = np.atleast_1d(np.asarray(model.eval(p, u), dtype=float))
    if y.size != model.n_y:
        raise ConfigError(f"{model.name}: eval returned {y.size} outputs, expected {model.n_y}")
    if not np.all(np.isfinite(y)):
        raise ValueError(f"{model.name}: non-finite output at p={p}, u={u}")
    return y


def param_jacobian(model: ModelSpec, p, u) -> np.ndarray:
    """dF/dp at (p, u), analytic when the model supplies it.

    The finite-difference fallback is central with per-coordinate step
    h_j = 1e-6 * max(1, |p_j|); built-ins all carry analytic Jacobians, so
    the fallback mainly serves user-defined models and the cross-checks in
    the test suite.
    """
    p = _as_param(model, p)
    u = float(u)
    if model.param_sensitivity is not None:
        J = np.atleast_2d(np.asarray(model.param_sensitivity(p, u), dtype=float))
    else:
        J = np.empty((model.n_y, model.n_p))
        for j in range(model.n_p):
            h = 1e-6 * max(1.0, abs(p[j]))
            pp = p.copy()
            pp[j] = p[j] + h
            f_plus = np.atleast_1d(np.asarray(model.eval(pp, u), dtype=float))
            pp[j] = p[j] - h
            f_minus = np.atleast_1d(np.asarray(model.eval(pp, u), dtype=float))
            J[:, j] = (f_plus - f_minus) / (2.0 * h)
    if J.shape != (model.n_y, model.n_p):
        raise ConfigError(f"{model.name}: Jacobian shape {J.shape} != {(model.n_y, model.n_p)}")
    if not np.all(np.isfinite(J)):
        raise ValueError(f"{model.name}: non-finite Jacobian at p={p}, u={u}")
    return J


def input_jacobian(model: ModelSpec, p, u) -> np.ndarray:
    """dF/du at (p, u) — the design variables enter here.

    Same conventions as param_jacobian: analytic when supplied, central
    finite differences with h = 1e-6 * max(1, |u|) otherwise.
    """
    p = _as_param(model, p)
    u = float(u)
    if model.input_sensitivity is not None:
        d = np.atleast_1d(np.asarray(model.input_sensitivity(p, u), dtype=float))
    else:
        h = 1e-6 * max(1.0, abs(u))
        f_plus = np.atleast_1d(np.asarray(model.eval(p, u + h), dtype=float))
        f_minus = np.atleast_1d(np.asarray(model.eval(p, u - h), dtype=float))
        d = (f_plus - f_minus) / (2.0 * h)
    if d.size != model.n_y:
        raise ConfigError(f"{model.name}: input derivative has size {d.size}, expected {model.n_y}")
    if not np.all(np.isfinite(d)):
        raise ValueError(f"{model.name}: non-finite input derivative at p={p}, u={u}")
    return d


def builtin_bod() -> ModelSpec:
    """First-order saturation growth: y = p1*(1 - exp(-p2*u))."""

    def f(p, u):
        return np.array([p[0] * (1.0 - np.exp(-p[1] * u))])

    def jac(p, u):
        e = np.exp(-p[1] * u)
        return np.array([[1.0 - e, p[0] * u * e]])

    def dydu(p, u):
        return np.array([p[0] * p[1] * np.exp(-p[1] * u)])

    return ModelSpec(
        name="bod",
        n_p=2,
        n_u=1,
        n_y=1,
        eval=f,
        param_sensitivity=jac,
        input_bounds=(0.0, 20.0),
        batch_eval=kernels.bod_predict,
        batch_sse=kernels.bod_sse,
        input_sensitivity=dydu,
    )


def builtin_second_order(b0: float = -4.0) -> ModelSpec:
    """Unit-step response of b0 / (s/p2 + 1) / (s*p1/p2 + 1) style dynamics.

    y = b0*(p1/p2^2) * ((p2*(p1+p2)/p1 * u + 1)*exp(-p2*u) - 1).
    Singular at p1 = 0 (the parameterization divides by p1), which is
    rejected rather than regularized.
    """
    b0 = float(b0)
    if not np.isfinite(b0):
        raise ConfigError("b0 must be finite")

    def _check(p):
        if p[0] == 0.0:
            raise ValueError("second-order model is singular at p1 = 0")

    def f(p, u):
        _check(p)
        amp = b0 * p[0] / p[1] ** 2
        decay = p[1] + p[1] ** 2 / p[0]
        return np.array([amp * ((decay * u + 1.0) * np.exp(-p[1] * u) - 1.0)])

    def jac(p, u):
        _check(p)
        p1, p2 = p
        e = np.exp(-p2 * u)
        amp = b0 * p1 / p2**2
        decay = p2 + p2**2 / p1
        core = (decay * u + 1.0) * e - 1.0
        # product rule: d(amp)/dp * core + amp * d(core)/dp
        d_amp_p1 = b0 / p2**2
        d_amp_p2 = -2.0 * b0 * p1 / p2**3
        d_core_p1 = -(p2**2 / p1**2) * u * e
        d_core_p2 = (1.0 + 2.0 * p2 / p1) * u * e - (decay * u + 1.0) * u * e
        return np.array([[d_amp_p1 * core + amp * d_core_p1, d_amp_p2 * core + amp * d_core_p2]])

    def dydu(p, u):
        _check(p)
        p1, p2 = p
        e = np.exp(-p2 * u)
        amp = b0 * p1 / p2**2
        decay = p2 + p2**2 / p1
        return np.array([amp * e * (decay - p2 * (decay * u + 1.0))])

    return ModelSpec(
        name="second-order",
        n_p=2,
        n_u=1,
        n_y=1,
        eval=f,
        param_sensitivity=jac,
        known_constants={"b0": b0},
        input_bounds=(0.0, 10.0),
        batch_eval=lambda P, u: kernels.so2_predict(P, u, b0),
        batch_sse=lambda P, u, y, w: kernels.so2_sse(P, u, y, w, b0),
        input_sensitivity=dydu,
    )


def builtin_poly2() -> ModelSpec:
    """y = p1*u + p2*u^2 — linear in p, the exact-equals-classical test case."""

    def f(p, u):
        return np.array([p[0] * u + p[1] * u * u])

    def jac(p, u):
        return np.array([[u, u * u]])

    def dydu(p, u):
        return np.array([p[0] + 2.0 * p[1] * u])

    def batch_eval(P, u):
        P = np.asarray(P, dtype=float)
        u = np.asarray(u, dtype=float)
        return np.outer(P[:, 0], u) + np.outer(P[:, 1], u * u)

    def batch_sse(P, u, y, w):
        return kernels.weighted_sse(batch_eval(P, u), np.asarray(y, float), np.asarray(w, float))

    return ModelSpec(
        name="poly2",
        n_p=2,
        n_u=1,
        n_y=1,
        eval=f,
        param_sensitivity=jac,
        input_bounds=(-1.0, 1.0),
        batch_eval=batch_eval,
        batch_sse=batch_sse,
        input_sensitivity=dydu,
    )


_REGISTRY = {
    "bod": lambda constants: builtin_bod(),
    "second-order": lambda constants: builtin_second_order(constants.get("b0", -4.0)),
    "poly2": lambda constants: builtin_poly2(),
}


def get_model(name: str, constants: Optional[Mapping[str, float]] = None) -> ModelSpec:
    """Look a built-in model up by its config id."""
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ConfigError(f"unknown model id {name!r}; known: {sorted(_REGISTRY)}") from None
    return factory(dict(constants or {}))
