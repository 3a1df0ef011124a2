"""NumPy reference implementations of the batched hot-path kernels.

These are the semantics of record; the compiled extension in ``_kernels.pyx``
implements the same formulas and must agree to ~1e-15 relative (exp and sum
orderings may differ in the last ulp between libm and NumPy).  Each backend
is individually deterministic: same inputs, same bits out.  Everything takes
float64 arrays: a parameter batch ``P`` of shape (m, 2), a flat input vector
``u`` of shape (N,), observations ``y`` (N,) and per-sample weights ``w``
(N,).
"""

from __future__ import annotations

import numpy as np

BACKEND = "numpy"


def bod_predict(P, u):
    """Batched first-order saturation model p1*(1 - exp(-p2*u)), shape (m, N)."""
    P = np.asarray(P, dtype=float)
    u = np.asarray(u, dtype=float)
    return P[:, 0:1] * (1.0 - np.exp(-np.outer(P[:, 1], u)))


def so2_predict(P, u, b0):
    """Batched second-order step response, shape (m, N).

    y = b0*(p1/p2^2) * ((p2*(p1+p2)/p1 * u + 1) * exp(-p2*u) - 1)
    """
    P = np.asarray(P, dtype=float)
    u = np.asarray(u, dtype=float)
    p1 = P[:, 0:1]
    p2 = P[:, 1:2]
    amp = b0 * p1 / (p2 * p2)
    decay = p2 + p2 * p2 / p1
    e = np.exp(-p2 * u[None, :])
    return amp * ((decay * u[None, :] + 1.0) * e - 1.0)


def weighted_sse(pred, y, w):
    """sum_t w[t] * (y[t] - pred[:, t])^2, shape (m,)."""
    r = y[None, :] - pred
    return np.einsum("t,mt,mt->m", w, r, r)


def bod_sse(P, u, y, w):
    return weighted_sse(bod_predict(P, u), np.asarray(y, float), np.asarray(w, float))


def so2_sse(P, u, y, w, b0):
    return weighted_sse(so2_predict(P, u, b0), np.asarray(y, float), np.asarray(w, float))
