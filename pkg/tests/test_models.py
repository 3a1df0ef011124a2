"""Built-in model formulas, analytic Jacobians vs finite differences."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exactoed.errors import ConfigError
from exactoed.models import (
    ModelSpec,
    builtin_bod,
    builtin_poly2,
    builtin_second_order,
    evaluate_model,
    get_model,
    input_jacobian,
    param_jacobian,
)


def fd_param_jacobian(model, p, u, h=1e-6):
    p = np.asarray(p, dtype=float)
    J = np.empty((model.n_y, model.n_p))
    for j in range(model.n_p):
        step = h * max(1.0, abs(p[j]))
        pp, pm = p.copy(), p.copy()
        pp[j] += step
        pm[j] -= step
        J[:, j] = (evaluate_model(model, pp, u) - evaluate_model(model, pm, u)) / (2 * step)
    return J


def test_bod_values():
    m = builtin_bod()
    p = np.array([2.5, 0.5])
    assert evaluate_model(m, p, 0.0)[0] == 0.0
    assert evaluate_model(m, p, 2.0)[0] == pytest.approx(2.5 * (1 - np.exp(-1.0)), rel=1e-14)
    # saturates toward p1
    assert evaluate_model(m, p, 20.0)[0] == pytest.approx(2.5, abs=2.5e-4)


def test_second_order_values():
    m = builtin_second_order()
    p = np.array([0.5, 1.0])
    # closed form: y = b0*(p1/p2^2)*((d*u + 1)*exp(-p2*u) - 1), d = p2 + p2^2/p1
    b0, d = -4.0, 1.0 + 1.0 / 0.5
    for u in (0.5, 2.0, 10.0):
        want = b0 * 0.5 * ((d * u + 1.0) * np.exp(-u) - 1.0)
        assert evaluate_model(m, p, u)[0] == pytest.approx(want, rel=1e-12)
    assert evaluate_model(m, p, 0.0)[0] == 0.0


def test_second_order_constant_override():
    m = get_model("second-order", {"b0": 2.0})
    base = get_model("second-order")
    u, p = 3.0, np.array([0.5, 1.0])
    assert evaluate_model(m, p, u)[0] == pytest.approx(-0.5 * evaluate_model(base, p, u)[0], rel=1e-12)


def test_poly2_is_linear_in_p():
    m = builtin_poly2()
    p1, p2 = np.array([1.0, 2.0]), np.array([0.3, -0.7])
    u = 0.4
    lhs = evaluate_model(m, 0.25 * p1 + 0.75 * p2, u)
    rhs = 0.25 * evaluate_model(m, p1, u) + 0.75 * evaluate_model(m, p2, u)
    assert lhs == pytest.approx(rhs, rel=1e-14)


@pytest.mark.parametrize("factory", [builtin_bod, builtin_second_order, builtin_poly2])
def test_param_jacobian_matches_fd(factory):
    m = factory()
    rng = np.random.default_rng(0)
    for _ in range(6):
        p = rng.uniform(0.2, 3.0, size=m.n_p)
        u = rng.uniform(*m.input_bounds)
        assert param_jacobian(m, p, u) == pytest.approx(fd_param_jacobian(m, p, u), rel=2e-6, abs=2e-8)


@pytest.mark.parametrize("factory", [builtin_bod, builtin_second_order, builtin_poly2])
def test_input_jacobian_matches_fd(factory):
    m = factory()
    rng = np.random.default_rng(1)
    for _ in range(6):
        p = rng.uniform(0.2, 3.0, size=m.n_p)
        lo, hi = m.input_bounds
        u = rng.uniform(lo + 0.05 * (hi - lo), hi - 0.05 * (hi - lo))
        h = 1e-6 * max(1.0, abs(u))
        fd = (evaluate_model(m, p, u + h) - evaluate_model(m, p, u - h)) / (2 * h)
        assert input_jacobian(m, p, u) == pytest.approx(fd, rel=2e-6, abs=2e-8)


def test_fd_jacobian_fallback_used_when_analytic_missing():
    base = builtin_bod()
    stripped = ModelSpec(
        name="bod-fd",
        n_p=2,
        n_u=1,
        n_y=1,
        eval=base.eval,
        input_bounds=base.input_bounds,
    )
    p, u = np.array([2.5, 0.5]), 3.0
    assert param_jacobian(stripped, p, u) == pytest.approx(param_jacobian(base, p, u), rel=1e-5)
    assert input_jacobian(stripped, p, u) == pytest.approx(input_jacobian(base, p, u), rel=1e-5)


@given(st.floats(0.1, 5.0), st.floats(0.1, 2.0), st.floats(0.0, 20.0))
@settings(max_examples=50, deadline=None)
def test_bod_bounded_by_p1(p1, p2, u):
    y = evaluate_model(builtin_bod(), [p1, p2], u)[0]
    assert 0.0 <= y <= p1 + 1e-12


def test_registry_lookup_and_errors():
    assert get_model("bod").name == "bod"
    assert get_model("poly2").n_p == 2
    with pytest.raises(ConfigError):
        get_model("no-such-model")
    with pytest.raises(ConfigError):
        evaluate_model(builtin_bod(), [1.0, 2.0, 3.0], 1.0)


def test_input_bounds():
    assert builtin_bod().input_bounds == (0.0, 20.0)
    assert builtin_second_order().input_bounds == (0.0, 10.0)
    assert builtin_poly2().input_bounds == (-1.0, 1.0)
