"""Local SQP solver: analytic optima, multipliers, multistart, grid verifier."""

import numpy as np
import pytest

from exactoed.nlp import NlpProblem, NlpSolution, solve_local, solve_multistart, verify_global_on_grid


def test_unconstrained_quadratic():
    # min (x1-1)^2 + 2(x2+0.5)^2
    prob = NlpProblem(
        n=2,
        objective=lambda x: (x[0] - 1.0) ** 2 + 2.0 * (x[1] + 0.5) ** 2,
    )
    sol = solve_local(prob, np.array([5.0, 5.0]))
    assert sol.converged
    assert sol.x == pytest.approx([1.0, -0.5], abs=1e-7)
    assert sol.value == pytest.approx(0.0, abs=1e-12)


def test_bound_constrained_optimum_at_bound():
    # min (x-3)^2 on [0, 1] -> x* = 1
    prob = NlpProblem(n=1, objective=lambda x: (x[0] - 3.0) ** 2,
                      lower=np.array([0.0]), upper=np.array([1.0]))
    sol = solve_local(prob, np.array([0.2]))
    assert sol.converged
    assert sol.x[0] == pytest.approx(1.0, abs=1e-9)


def test_inequality_multiplier_value():
    # min x1^2 + x2^2  s.t. 1 - x1 - x2 <= 0
    # optimum (0.5, 0.5), nu = 1 in original sense: grad f + nu grad h = 0
    prob = NlpProblem(
        n=2,
        objective=lambda x: x[0] ** 2 + x[1] ** 2,
        gradient=lambda x: 2.0 * x,
        ineq=lambda x: np.array([1.0 - x[0] - x[1]]),
    )
    sol = solve_local(prob, np.array([2.0, 0.1]))
    assert sol.converged
    assert sol.x == pytest.approx([0.5, 0.5], abs=1e-7)
    assert sol.mult_ineq[0] == pytest.approx(1.0, abs=1e-6)
    assert sol.active[0]


def test_maximization_multiplier_sign():
    # max -(x-2)^2 s.t. x - 1 <= 0 -> x* = 1, and in the original max sense
    # stationarity -2(x-2) + nu * 1 = 0 gives nu = -2 <= 0
    prob = NlpProblem(
        n=1,
        objective=lambda x: -((x[0] - 2.0) ** 2),
        ineq=lambda x: np.array([x[0] - 1.0]),
        sense="max",
    )
    sol = solve_local(prob, np.array([0.0]))
    assert sol.converged
    assert sol.x[0] == pytest.approx(1.0, abs=1e-7)
    assert sol.value == pytest.approx(-1.0, abs=1e-8)
    assert sol.mult_ineq[0] == pytest.approx(-2.0, abs=1e-5)


def test_equality_constrained():
    # min x1^2 + x2^2 s.t. x1 + 2 x2 - 5 = 0 -> x* = (1, 2), nu_E = -2
    prob = NlpProblem(
        n=2,
        objective=lambda x: x[0] ** 2 + x[1] ** 2,
        eq=lambda x: np.array([x[0] + 2.0 * x[1] - 5.0]),
    )
    sol = solve_local(prob, np.array([4.0, -1.0]))
    assert sol.converged
    assert sol.x == pytest.approx([1.0, 2.0], abs=1e-7)
    assert sol.mult_eq[0] == pytest.approx(-2.0, abs=1e-5)


def test_fd_gradient_fallback():
    # no gradient callback: the solver differentiates the objective itself
    # (quartic term is curvature-free at the optimum, so x1 converges slowly)
    prob = NlpProblem(n=2, objective=lambda x: (x[0] - 0.3) ** 4 + (x[1] + 1.2) ** 2)
    sol = solve_local(prob, np.array([2.0, 2.0]))
    assert sol.converged
    assert sol.x == pytest.approx([0.3, -1.2], abs=5e-3)


def test_solution_reports_kkt_residual():
    prob = NlpProblem(n=1, objective=lambda x: (x[0] - 1.0) ** 2)
    sol = solve_local(prob, np.array([0.0]))
    assert isinstance(sol, NlpSolution)
    assert sol.kkt_residual <= 1e-8


def test_multistart_finds_global_basin():
    # two-well objective: global minimum near x = -1.7 (value ~ -9.6),
    # local minimum near x = 1.9
    def f(x):
        t = x[0]
        return t**4 - 5.0 * t**2 + 1.5 * t

    prob = NlpProblem(n=1, objective=f, lower=np.array([-3.0]), upper=np.array([3.0]))
    box = np.array([[-3.0, 3.0]])
    best, pool = solve_multistart(prob, box, n_starts=12, seed=0)
    assert best is not None
    assert best.x[0] == pytest.approx(-1.652, abs=5e-3)
    assert len(pool) >= 2  # both basins show up in the pool


def test_multistart_deterministic():
    prob = NlpProblem(n=2, objective=lambda x: np.sin(3 * x[0]) + (x[0] - 0.5) ** 2 + x[1] ** 2,
                      lower=np.array([-2.0, -1.0]), upper=np.array([2.0, 1.0]))
    box = np.array([[-2.0, 2.0], [-1.0, 1.0]])
    b1, _ = solve_multistart(prob, box, n_starts=10, seed=3)
    b2, _ = solve_multistart(prob, box, n_starts=10, seed=3)
    assert np.array_equal(b1.x, b2.x)
    assert b1.value == b2.value


def test_grid_verifier_agrees_with_solver():
    def f(x):
        return (x[0] - 0.3) ** 2 + (x[1] + 0.4) ** 2

    prob = NlpProblem(n=2, objective=f,
                      lower=np.array([-1.0, -1.0]), upper=np.array([1.0, 1.0]))
    box = np.array([[-1.0, 1.0], [-1.0, 1.0]])
    sol = solve_local(prob, np.array([0.9, 0.9]))
    cert = verify_global_on_grid(prob, box, resolution=101)
    assert cert["best_value"] >= sol.value - 1e-9  # grid cannot beat the true optimum
    assert cert["best_value"] <= sol.value + 1e-3  # and comes close on a fine grid


def test_maximization_grid_verifier():
    def f(x):
        return -((x[0] - 0.25) ** 2)

    prob = NlpProblem(n=1, objective=f, lower=np.array([-1.0]), upper=np.array([1.0]), sense="max")
    cert = verify_global_on_grid(prob, np.array([[-1.0, 1.0]]), resolution=201)
    assert cert["best_value"] <= 0.0 + 1e-12
    assert cert["best_value"] >= -1e-4
