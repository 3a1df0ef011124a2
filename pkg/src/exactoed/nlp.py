"""Smooth constrained local optimization, multistart, and grid verification.

The local solver is a dense SQP: damped-BFGS Hessian approximation,
quadratic subproblems solved with cvxopt, and an l1-penalty line search.
Problems here are tiny (2–16 variables, a handful of constraints), so
robustness and clean multipliers matter far more than scale.  Multipliers
are reported in the *original* problem sense: stationarity reads

    grad f + sum nu_E grad h_E + sum nu_I grad h_I = 0 (+ bound terms)

with nu_I >= 0 for minimization and nu_I <= 0 for maximization.

Global optimization is approximated the usual engineering way: a seeded
low-discrepancy multistart picks the best KKT point, and
``verify_global_on_grid`` sweeps a dense feasible grid as an independent
certificate that the multistart did not miss a better basin.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from cvxopt import matrix as cvxmatrix
from cvxopt import solvers as cvxsolvers
from scipy.stats import qmc

from .errors import SolverFailure, VerificationFailure

__all__ = [
    "NlpProblem",
    "NlpSolution",
    "solve_local",
    "solve_multistart",
    "verify_global_on_grid",
]

_QP_OPTIONS = {
    "show_progress": False,
    "abstol": 1e-12,
    "reltol": 1e-12,
    "feastol": 1e-12,
    "maxiters": 200,
}

ACTIVE_TOL = 1e-7  # |h_I| below this counts the constraint as active
WEAK_MULT_TOL = 1e-9  # active constraints with |nu| below this are 'weakly active'


@dataclass(frozen=True)
class NlpProblem:
    """min/max objective(x) s.t. eq(x) = 0, ineq(x) <= 0, lower <= x <= upper.

    Callbacks must be deterministic.  Missing gradients/Jacobians are
    replaced by central finite differences.  ``batch_eval``, if given, maps
    a point batch X (m, n) to (objective values (m,), feasibility mask
    (m,)) and is only used by the grid verifier.
    """

    n: int
    objective: Callable[[np.ndarray], float]
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    eq: Optional[Callable[[np.ndarray], np.ndarray]] = None
    eq_jac: Optional[Callable[[np.ndarray], np.ndarray]] = None
    ineq: Optional[Callable[[np.ndarray], np.ndarray]] = None
    ineq_jac: Optional[Callable[[np.ndarray], np.ndarray]] = None
    lower: np.ndarray = None  # type: ignore[assignment]
    upper: np.ndarray = None  # type: ignore[assignment]
    sense: str = "min"
    batch_eval: Optional[Callable] = None

    def __post_init__(self):
        if self.sense not in ("min", "max"):
            raise ValueError("sense must be 'min' or 'max'")
        lo = np.full(self.n, -np.inf) if self.lower is None else np.asarray(self.lower, float).reshape(-1)
        hi = np.full(self.n, np.inf) if self.upper is None else np.asarray(self.upper, float).reshape(-1)
        if lo.size != self.n or hi.size != self.n:
            raise ValueError("bound dimensions do not match n")
        if np.any(lo > hi):
            raise ValueError("lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)


@dataclass(frozen=True)
class NlpSolution:
    x: np.ndarray
    value: float  # objective in the original sense
    mult_eq: np.ndarray
    mult_ineq: np.ndarray  # one entry per inequality, 0 when inactive
    active: np.ndarray  # boolean mask over inequalities
    status: str  # converged | max-iter | step-collapse | failed
    kkt_residual: float
    iterations: int

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def strongly_active(self) -> np.ndarray:
        """Active inequalities whose multipliers are clearly nonzero."""
        return self.active & (np.abs(self.mult_ineq) >= WEAK_MULT_TOL)


def _fd_gradient(f: Callable, x: np.ndarray) -> np.ndarray:
    g = np.empty(x.size)
    for j in range(x.size):
        h = 1e-6 * max(1.0, abs(x[j]))
        xp = x.copy()
        xp[j] = x[j] + h
        fp = f(xp)
        xp[j] = x[j] - h
        fm = f(xp)
        g[j] = (fp - fm) / (2.0 * h)
    return g


def _fd_jacobian(fvec: Callable, x: np.ndarray, m: int) -> np.ndarray:
    J = np.empty((m, x.size))
    for j in range(x.size):
        h = 1e-6 * max(1.0, abs(x[j]))
        xp = x.copy()
        xp[j] = x[j] + h
        fp = np.asarray(fvec(xp), float).reshape(-1)
        xp[j] = x[j] - h
        fm = np.asarray(fvec(xp), float).reshape(-1)
        J[:, j] = (fp - fm) / (2.0 * h)
    return J


class _MinForm:
    """Internal minimization view of an NlpProblem (sense folded into signs)."""

    def __init__(self, problem: NlpProblem):
        self.p = problem
        self.sign = 1.0 if problem.sense == "min" else -1.0
        self.n = problem.n
        # probe constraint dimensions once, at a finite in-box point
        lo, hi = problem.lower, problem.upper
        mid = np.zeros(problem.n)
        both = np.isfinite(lo) & np.isfinite(hi)
        mid[both] = 0.5 * (lo[both] + hi[both])
        only_lo = np.isfinite(lo) & ~np.isfinite(hi)
        mid[only_lo] = lo[only_lo] + 1.0
        only_hi = ~np.isfinite(lo) & np.isfinite(hi)
        mid[only_hi] = hi[only_hi] - 1.0
        self.m_eq = 0 if problem.eq is None else np.asarray(problem.eq(mid), float).reshape(-1).size
        self.m_ineq = 0 if problem.ineq is None else np.asarray(problem.ineq(mid), float).reshape(-1).size

    def f(self, x):
        return self.sign * float(self.p.objective(x))

    def g(self, x):
        if self.p.gradient is not None:
            return self.sign * np.asarray(self.p.gradient(x), float).reshape(-1)
        return self.sign * _fd_gradient(lambda z: float(self.p.objective(z)), x)

    def h_eq(self, x):
        if self.m_eq == 0:
            return np.zeros(0)
        return np.asarray(self.p.eq(x), float).reshape(-1)

    def jac_eq(self, x):
        if self.m_eq == 0:
            return np.zeros((0, self.n))
        if self.p.eq_jac is not None:
            return np.asarray(self.p.eq_jac(x), float).reshape(self.m_eq, self.n)
        return _fd_jacobian(self.p.eq, x, self.m_eq)

    def h_in(self, x):
        if self.m_ineq == 0:
            return np.zeros(0)
        return np.asarray(self.p.ineq(x), float).reshape(-1)

    def jac_in(self, x):
        if self.m_ineq == 0:
            return np.zeros((0, self.n))
        if self.p.ineq_jac is not None:
            return np.asarray(self.p.ineq_jac(x), float).reshape(self.m_ineq, self.n)
        return _fd_jacobian(self.p.ineq, x, self.m_ineq)

    def violation(self, h_eq, h_in, x):
        v = 0.0
        if h_eq.size:
            v += float(np.abs(h_eq).sum())
        if h_in.size:
            v += float(np.clip(h_in, 0.0, None).sum())
        v += float(np.clip(self.p.lower - x, 0.0, None).sum())
        v += float(np.clip(x - self.p.upper, 0.0, None).sum())
        return v


def _solve_qp(B, g, A_eq, b_eq, A_in, b_in, d_lo, d_hi):
    """min 0.5 d'Bd + g'd  s.t.  A_eq d = b_eq, A_in d <= b_in, d_lo <= d <= d_hi.

    Returns (d, mult_eq, mult_in) or None when cvxopt cannot solve it.
    Bound rows are appended to the inequality block; their multipliers are
    folded into the stationarity check implicitly and not returned.
    """
    n = g.size
    G_rows = [A_in] if A_in.size else []
    h_rows = [b_in] if b_in.size else []
    finite_lo = np.isfinite(d_lo)
    finite_hi = np.isfinite(d_hi)
    if finite_lo.any():
        G_rows.append(-np.eye(n)[finite_lo])
        h_rows.append(-d_lo[finite_lo])
    if finite_hi.any():
        G_rows.append(np.eye(n)[finite_hi])
        h_rows.append(d_hi[finite_hi])
    G = np.vstack(G_rows) if G_rows else np.zeros((0, n))
    h = np.concatenate(h_rows) if h_rows else np.zeros(0)

    args = [cvxmatrix(B), cvxmatrix(g)]
    kwargs = {"options": _QP_OPTIONS}
    if G.shape[0]:
        kwargs["G"] = cvxmatrix(G)
        kwargs["h"] = cvxmatrix(h)
    if A_eq.shape[0]:
        kwargs["A"] = cvxmatrix(A_eq)
        kwargs["b"] = cvxmatrix(b_eq)
    try:
        sol = cvxsolvers.qp(*args, **kwargs)
    except (ValueError, ArithmeticError):
        return None
    if sol["status"] not in ("optimal", "unknown"):
        return None
    d = np.asarray(sol["x"]).reshape(-1)
    if not np.all(np.isfinite(d)):
        return None
    mult_eq = np.asarray(sol["y"]).reshape(-1) if A_eq.shape[0] else np.zeros(0)
    z = np.asarray(sol["z"]).reshape(-1) if G.shape[0] else np.zeros(0)
    mult_in = z[: A_in.shape[0]] if A_in.size else np.zeros(0)
    return d, mult_eq, mult_in


def _solve_qp_elastic(B, g, A_eq, b_eq, A_in, b_in, d_lo, d_hi, rho):
    """Feasibility-relaxed QP: slacks on every nonlinear constraint row.

    Variables (d, s_eq+, s_eq-, s_in), all slacks >= 0, penalized by rho in
    the objective.  Always feasible, so it rescues iterates whose
    linearizations are contradictory.
    """
    n = g.size
    m_eq, m_in = A_eq.shape[0], A_in.shape[0]
    n_ext = n + 2 * m_eq + m_in
    B_ext = np.eye(n_ext) * 1e-8
    B_ext[:n, :n] = B
    g_ext = np.concatenate([g, np.full(2 * m_eq + m_in, rho)])

    A_ext = np.zeros((m_eq, n_ext))
    if m_eq:
        A_ext[:, :n] = A_eq
        A_ext[:, n : n + m_eq] = -np.eye(m_eq)
        A_ext[:, n + m_eq : n + 2 * m_eq] = np.eye(m_eq)

    rows = []
    rhs = []
    if m_in:
        R = np.zeros((m_in, n_ext))
        R[:, :n] = A_in
        R[:, n + 2 * m_eq :] = -np.eye(m_in)
        rows.append(R)
        rhs.append(b_in)
    # slack nonnegativity
    S = np.zeros((2 * m_eq + m_in, n_ext))
    S[:, n:] = -np.eye(2 * m_eq + m_in)
    rows.append(S)
    rhs.append(np.zeros(2 * m_eq + m_in))
    # box on d
    finite_lo = np.isfinite(d_lo)
    finite_hi = np.isfinite(d_hi)
    if finite_lo.any():
        R = np.zeros((finite_lo.sum(), n_ext))
        R[:, :n] = -np.eye(n)[finite_lo]
        rows.append(R)
        rhs.append(-d_lo[finite_lo])
    if finite_hi.any():
        R = np.zeros((finite_hi.sum(), n_ext))
        R[:, :n] = np.eye(n)[finite_hi]
        rows.append(R)
        rhs.append(d_hi[finite_hi])
    G = np.vstack(rows)
    h = np.concatenate(rhs)

    kwargs = {"options": _QP_OPTIONS, "G": cvxmatrix(G), "h": cvxmatrix(h)}
    if m_eq:
        kwargs["A"] = cvxmatrix(A_ext)
        kwargs["b"] = cvxmatrix(b_eq)
    try:
        sol = cvxsolvers.qp(cvxmatrix(B_ext), cvxmatrix(g_ext), **kwargs)
    except (ValueError, ArithmeticError):
        return None
    if sol["status"] not in ("optimal", "unknown"):
        return None
    z_full = np.asarray(sol["x"]).reshape(-1)
    d = z_full[:n]
    if not np.all(np.isfinite(d)):
        return None
    mult_eq = np.asarray(sol["y"]).reshape(-1) if m_eq else np.zeros(0)
    z = np.asarray(sol["z"]).reshape(-1)
    mult_in = z[:m_in] if m_in else np.zeros(0)
    return d, mult_eq, mult_in


def _kkt_residual(form: _MinForm, x, g, A_eq, A_in, h_eq, h_in, lam_eq, lam_in):
    """Max of stationarity / feasibility / complementarity residuals (min form)."""
    gL = g.copy()
    if lam_eq.size:
        gL += A_eq.T @ lam_eq
    if lam_in.size:
        gL += A_in.T @ lam_in
    lo, hi = form.p.lower, form.p.upper
    at_lo = np.isfinite(lo) & (x - lo <= 1e-9 * np.maximum(1.0, np.abs(x)))
    at_hi = np.isfinite(hi) & (hi - x <= 1e-9 * np.maximum(1.0, np.abs(x)))
    stat = np.abs(gL)
    # at an active bound the interior stationarity condition is replaced by
    # a sign condition on the reduced gradient
    stat[at_lo] = np.clip(-gL[at_lo], 0.0, None)
    stat[at_hi & ~at_lo] = np.clip(gL[at_hi & ~at_lo], 0.0, None)
    r_stat = float(stat.max()) if stat.size else 0.0
    r_feas = 0.0
    if h_eq.size:
        r_feas = max(r_feas, float(np.abs(h_eq).max()))
    if h_in.size:
        r_feas = max(r_feas, float(np.clip(h_in, 0.0, None).max()))
    r_feas = max(r_feas, float(np.clip(lo - x, 0.0, None).max(initial=0.0)))
    r_feas = max(r_feas, float(np.clip(x - hi, 0.0, None).max(initial=0.0)))
    r_comp = float(np.abs(lam_in * h_in).max()) if h_in.size else 0.0
    return max(r_stat, r_feas, r_comp)


def _polish_multipliers(form: _MinForm, x, g, A_eq, A_in, h_in):
    """Least-squares multipliers over the active set, sign-projected."""
    active = np.abs(h_in) <= ACTIVE_TOL if h_in.size else np.zeros(0, bool)
    lo, hi = form.p.lower, form.p.upper
    at_lo = np.where(np.isfinite(lo) & (x - lo <= 1e-9 * np.maximum(1.0, np.abs(x))))[0]
    at_hi = np.where(np.isfinite(hi) & (hi - x <= 1e-9 * np.maximum(1.0, np.abs(x))))[0]
    rows = []
    if A_eq.shape[0]:
        rows.append(A_eq)
    idx_active = np.where(active)[0]
    if idx_active.size:
        rows.append(A_in[idx_active])
    for j in at_lo:
        e = np.zeros(form.n)
        e[j] = -1.0
        rows.append(e[None, :])
    for j in at_hi:
        e = np.zeros(form.n)
        e[j] = 1.0
        rows.append(e[None, :])
    lam_eq = np.zeros(A_eq.shape[0])
    lam_in = np.zeros(h_in.size)
    if not rows:
        return lam_eq, lam_in
    A = np.vstack(rows)
    mu, *_ = np.linalg.lstsq(A.T, -g, rcond=None)
    k = A_eq.shape[0]
    lam_eq = mu[:k]
    lam_act = mu[k : k + idx_active.size]
    lam_act = np.clip(lam_act, 0.0, None)  # inequality multipliers >= 0 in min form
    lam_in[idx_active] = lam_act
    return lam_eq, lam_in


def solve_local(problem: NlpProblem, x0, tolerances=None) -> NlpSolution:
    """SQP from a single start point; returns the best iterate found."""
    tols = dict(tolerances or {})
    kkt_tol = float(tols.get("kkt_tol", 1e-8))
    max_iter = int(tols.get("max_iter", 200))

    form = _MinForm(problem)
    lo, hi = problem.lower, problem.upper
    x = np.clip(np.asarray(x0, float).reshape(-1).copy(), lo, hi)
    if x.size != problem.n:
        raise SolverFailure(f"start point has dimension {x.size}, expected {problem.n}")

    B = np.eye(problem.n)
    rho = 1.0
    lam_eq = np.zeros(form.m_eq)
    lam_in = np.zeros(form.m_ineq)
    status = "max-iter"
    it = 0
    gauge_best = np.inf  # objective + violation, for stall detection
    stall = 0

    fx = form.f(x)
    g = form.g(x)
    h_eq = form.h_eq(x)
    h_in = form.h_in(x)
    A_eq = form.jac_eq(x)
    A_in = form.jac_in(x)

    for it in range(1, max_iter + 1):
        res = _kkt_residual(form, x, g, A_eq, A_in, h_eq, h_in, lam_eq, lam_in)
        if res <= kkt_tol:
            status = "converged"
            break

        qp = _solve_qp(B, g, A_eq, -h_eq, A_in, -h_in, lo - x, hi - x)
        if qp is None:
            qp = _solve_qp_elastic(B, g, A_eq, -h_eq, A_in, -h_in, lo - x, hi - x, rho=1e4)
        if qp is None:
            status = "failed"
            break
        d, lam_eq_new, lam_in_new = qp

        step_norm = float(np.abs(d).max()) if d.size else 0.0
        if step_norm <= 1e-14:
            lam_eq, lam_in = lam_eq_new, lam_in_new
            res = _kkt_residual(form, x, g, A_eq, A_in, h_eq, h_in, lam_eq, lam_in)
            status = "converged" if res <= kkt_tol else "step-collapse"
            break

        # l1 merit line search
        mults = np.concatenate([np.abs(lam_eq_new), np.abs(lam_in_new)]) if (lam_eq_new.size or lam_in_new.size) else np.zeros(1)
        rho = max(rho, 2.0 * float(mults.max(initial=0.0)) + 1.0)
        viol0 = form.violation(h_eq, h_in, x)
        merit0 = fx + rho * viol0
        deriv = float(g @ d) - rho * viol0
        alpha = 1.0
        accepted = False
        while alpha >= 2.0**-30:
            x_new = np.clip(x + alpha * d, lo, hi)
            f_new = form.f(x_new)
            h_eq_new = form.h_eq(x_new)
            h_in_new = form.h_in(x_new)
            merit_new = f_new + rho * form.violation(h_eq_new, h_in_new, x_new)
            if merit_new <= merit0 + 1e-4 * alpha * min(deriv, 0.0) + 1e-14 * max(1.0, abs(merit0)):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            lam_eq, lam_in = lam_eq_new, lam_in_new
            res = _kkt_residual(form, x, g, A_eq, A_in, h_eq, h_in, lam_eq, lam_in)
            status = "converged" if res <= kkt_tol else "step-collapse"
            break

        g_old = g
        A_eq_old, A_in_old = A_eq, A_in
        x, fx, h_eq, h_in = x_new, f_new, h_eq_new, h_in_new
        lam_eq, lam_in = lam_eq_new, lam_in_new

        gauge = fx + form.violation(h_eq, h_in, x)
        if gauge < gauge_best:  # strict: the last stretch to kkt_tol moves by ~eps*f
            gauge_best, stall = gauge, 0
        else:
            stall += 1
            if stall >= 12:  # accepted steps but no progress at all
                g, A_eq, A_in = form.g(x), form.jac_eq(x), form.jac_in(x)
                status = "step-collapse"
                break

        g = form.g(x)
        A_eq = form.jac_eq(x)
        A_in = form.jac_in(x)

        # damped BFGS on the Lagrangian gradient difference
        s = alpha * d
        def grad_lag(gv, Ae, Ai):
            out = gv.copy()
            if lam_eq.size:
                out += Ae.T @ lam_eq
            if lam_in.size:
                out += Ai.T @ lam_in
            return out

        with np.errstate(over="ignore", invalid="ignore"):
            y = grad_lag(g, A_eq, A_in) - grad_lag(g_old, A_eq_old, A_in_old)
            Bs = B @ s
            sBs = float(s @ Bs)
            sy = float(s @ y)
            if np.all(np.isfinite(y)) and np.isfinite(sBs) and 1e-16 < sBs < 1e16:
                if sy < 0.2 * sBs:
                    theta = 0.8 * sBs / (sBs - sy)
                    y = theta * y + (1.0 - theta) * Bs
                    sy = float(s @ y)
                if np.isfinite(sy) and sy > 1e-16:
                    B_new = B - np.outer(Bs, Bs) / sBs + np.outer(y, y) / sy
                    if np.all(np.isfinite(B_new)):
                        B = 0.5 * (B_new + B_new.T)
            elif not np.all(np.isfinite(B)) or sBs >= 1e16:
                B = np.eye(problem.n)  # reset a blown-up approximation

    # final multiplier polish: keep whichever set gives the smaller residual
    lam_eq_p, lam_in_p = _polish_multipliers(form, x, g, A_eq, A_in, h_in)
    res_qp = _kkt_residual(form, x, g, A_eq, A_in, h_eq, h_in, lam_eq, lam_in)
    res_p = _kkt_residual(form, x, g, A_eq, A_in, h_eq, h_in, lam_eq_p, lam_in_p)
    if res_p < res_qp:
        lam_eq, lam_in, res = lam_eq_p, lam_in_p, res_p
    else:
        res = res_qp
    if status in ("max-iter", "step-collapse") and res <= kkt_tol:
        status = "converged"

    active = np.abs(h_in) <= ACTIVE_TOL if h_in.size else np.zeros(0, bool)
    lam_in_rep = np.where(active, lam_in, 0.0) if h_in.size else np.zeros(0)
    sign = 1.0 if problem.sense == "min" else -1.0
    return NlpSolution(
        x=x,
        value=float(problem.objective(x)),
        mult_eq=sign * lam_eq,
        mult_ineq=sign * lam_in_rep,
        active=active,
        status=status,
        kkt_residual=res,
        iterations=it,
    )


def _halton_starts(box: np.ndarray, n_starts: int, seed: int) -> np.ndarray:
    engine = qmc.Halton(d=box.shape[0], scramble=True, seed=seed)
    pts = engine.random(n_starts)
    return box[:, 0] + pts * (box[:, 1] - box[:, 0])


def solve_multistart(problem: NlpProblem, box, n_starts: int = 32, seed: int = 0, x0=None, tolerances=None):
    """Best KKT point over seeded low-discrepancy starts.

    Returns (best, pool): the winning solution (or None if every start
    failed) plus the pool of converged solutions, useful for detecting
    disagreeing local optima.  The start list is n_starts Halton points
    over ``box``, preceded by the caller's x0 and the box midpoint, so the
    pool for n_starts=k is a prefix of the pool for k' > k.
    """
    if n_starts < 1:
        raise SolverFailure("n_starts must be >= 1")
    box = np.asarray(box, float).reshape(problem.n, 2)
    starts = []
    if x0 is not None:
        starts.append(np.asarray(x0, float).reshape(-1))
    starts.append(0.5 * (box[:, 0] + box[:, 1]))
    starts.extend(_halton_starts(box, n_starts, seed))

    pool = []
    for s in starts:
        try:
            sol = solve_local(problem, s, tolerances)
        except (SolverFailure, ValueError, FloatingPointError, np.linalg.LinAlgError):
            continue
        if sol.converged:
            pool.append(sol)

    if not pool:
        return None, []
    better = (lambda a, b: a.value < b.value) if problem.sense == "min" else (lambda a, b: a.value > b.value)
    best = pool[0]
    for sol in pool[1:]:
        if better(sol, best) and abs(sol.value - best.value) > 1e-12 * max(1.0, abs(best.value)):
            best = sol
    return best, pool


def verify_global_on_grid(problem: NlpProblem, box, resolution=400, feas_tol=0.0, eq_band=None):
    """Dense-grid sanity check that a solver value is globally best.

    Evaluates the objective over all feasible grid points of ``box`` and
    reports gap = (best grid value) - (reference value), sense-adjusted so
    positive gap means the grid found something better.  The caller
    supplies the reference value through the returned closure-style dict:
    compare ``certificate['best_value']`` against the candidate, or use the
    convenience field after passing ``value``.
    """
    box = np.asarray(box, float).reshape(problem.n, 2)
    if problem.n > 4:
        raise SolverFailure("grid verification is only tractable for n <= 4")
    if np.isscalar(resolution):
        res = [int(resolution)] * problem.n
    else:
        res = [int(r) for r in resolution]
    total = int(np.prod(res))
    if total > 20_000_000:
        raise SolverFailure(f"grid of {total} nodes exceeds the budget; lower the resolution")
    axes = [np.linspace(box[j, 0], box[j, 1], res[j]) for j in range(problem.n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    X = np.stack([m.reshape(-1) for m in mesh], axis=1)

    if problem.batch_eval is not None:
        values, feasible = problem.batch_eval(X)
        values = np.asarray(values, float).reshape(-1)
        feasible = np.asarray(feasible, bool).reshape(-1)
    else:
        values = np.empty(X.shape[0])
        feasible = np.ones(X.shape[0], bool)
        for i in range(X.shape[0]):
            x = X[i]
            if problem.ineq is not None:
                h = np.asarray(problem.ineq(x), float)
                if np.any(h > feas_tol):
                    feasible[i] = False
                    continue
            if problem.eq is not None:
                band = eq_band if eq_band is not None else 1e-3
                h = np.asarray(problem.eq(x), float)
                if np.any(np.abs(h) > band):
                    feasible[i] = False
                    continue
            values[i] = problem.objective(x)

    if not feasible.any():
        raise VerificationFailure("grid verification found no feasible grid point")
    vals = values[feasible]
    pts = X[feasible]
    idx = int(np.argmin(vals)) if problem.sense == "min" else int(np.argmax(vals))
    return {
        "best_value": float(vals[idx]),
        "witness": pts[idx].copy(),
        "n_feasible": int(feasible.sum()),
        "resolution": tuple(res),
    }


def grid_gap(problem_sense: str, certificate: dict, value: float) -> float:
    """Positive when the grid beat the candidate value."""
    if problem_sense == "min":
        return value - certificate["best_value"]
    return certificate["best_value"] - value
