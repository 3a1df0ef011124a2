"""Residual objectives, thresholds, region specs, and the least-squares fit."""

import numpy as np
import pytest

from exactoed.errors import ConfigError
from exactoed.estimation import (
    Dataset,
    KnownSigma,
    UnknownVariance,
    cr_membership,
    default_search_box,
    design_crspec,
    exact_cr_threshold,
    fisher_information,
    least_squares_fit,
    linearized_cr,
    residual_gradient,
    residual_objective,
    residual_objective_batch,
    variance_estimate,
)
from exactoed.models import builtin_bod, builtin_poly2, evaluate_model
from exactoed.stats import chi2_quantile, f_quantile

P_HAT1 = np.array([2.5, 0.5])
BOX1 = np.array([[0.25, 25.0], [0.05, 5.0]])


def bod_dataset(U, noise, p=P_HAT1, y=None):
    m = builtin_bod()
    if y is None:
        y = np.array([evaluate_model(m, p, u) for u in U])
    return Dataset(U=np.asarray(U, float), Y=y, noise=noise)


def test_residual_objective_hand_value():
    m = builtin_bod()
    ds = Dataset(U=[1.0, 2.0], Y=[[1.0], [2.0]], noise=KnownSigma(0.5))
    p = np.array([2.0, 1.0])
    r1 = 1.0 - 2.0 * (1 - np.exp(-1.0))
    r2 = 2.0 - 2.0 * (1 - np.exp(-2.0))
    want = (r1**2 + r2**2) / 0.25
    assert residual_objective(m, ds, p, weighted=True) == pytest.approx(want, rel=1e-12)
    # unweighted drops the 1/sigma^2 factor
    assert residual_objective(m, ds, p, weighted=False) == pytest.approx(want * 0.25, rel=1e-12)


def test_residual_gradient_matches_fd():
    m = builtin_bod()
    ds = bod_dataset([1.0, 3.0, 7.0], UnknownVariance(0.1), y=np.array([[0.9], [2.0], [2.4]]))
    p = np.array([2.2, 0.6])
    g = residual_gradient(m, ds, p, weighted=False)
    for j in range(2):
        h = 1e-7
        pp, pm = p.copy(), p.copy()
        pp[j] += h
        pm[j] -= h
        fd = (residual_objective(m, ds, pp, False) - residual_objective(m, ds, pm, False)) / (2 * h)
        assert g[j] == pytest.approx(fd, rel=1e-6, abs=1e-10)


def test_batch_objective_matches_loop():
    m = builtin_bod()
    ds = bod_dataset([1.0, 2.0, 20.0], KnownSigma(0.1))
    rng = np.random.default_rng(0)
    P = rng.uniform(0.3, 3.0, size=(40, 2))
    batch = residual_objective_batch(m, ds, P, weighted=True)
    loop = [residual_objective(m, ds, P[i], True) for i in range(40)]
    assert batch == pytest.approx(loop, rel=1e-11)


def test_dataset_copies_inputs():
    # a frozen Dataset must not alias caller arrays: mutating the original
    # U afterwards must not change the stored samples
    U = np.array([1.0, 2.0, 3.0])
    ds = bod_dataset(U, KnownSigma(0.1))
    U[0] = 99.0
    assert ds.U[0] == 1.0


def test_dataset_validation():
    with pytest.raises(ConfigError):
        Dataset(U=[1.0, 2.0], Y=[[1.0]], noise=KnownSigma(0.1))
    with pytest.raises(ConfigError):
        Dataset(U=[], Y=np.empty((0, 1)), noise=KnownSigma(0.1))
    with pytest.raises(ConfigError):
        KnownSigma(0.0)
    with pytest.raises(ConfigError):
        UnknownVariance(-1.0)


def test_fisher_information_properties():
    m = builtin_bod()
    fim = fisher_information(m, P_HAT1, [2.0, 5.0, 20.0], sigma=0.1)
    M = fim.matrix
    assert M.shape == (2, 2)
    assert np.allclose(M, M.T)
    assert np.all(np.linalg.eigvalsh(M) > 0)
    # scaling: sigma -> 2 sigma divides the FIM by 4
    fim2 = fisher_information(m, P_HAT1, [2.0, 5.0, 20.0], sigma=0.2)
    assert fim2.matrix == pytest.approx(M / 4.0, rel=1e-12)


def test_thresholds():
    # known sigma: the chi-squared constant, independent of N
    assert exact_cr_threshold(KnownSigma(0.4), 0.9545, 2, 2) == pytest.approx(
        chi2_quantile(0.9545, 2), rel=1e-14)
    # unknown variance at design time: n_p * sigma^2 * F(alpha; n_p, N - n_p)
    c = exact_cr_threshold(UnknownVariance(0.1), 0.9545, 2, 4)
    assert c == pytest.approx(2 * 0.01 * f_quantile(0.9545, 2, 2), rel=1e-14)
    assert c == pytest.approx(0.4195604395604398, abs=1e-12)
    with pytest.raises(ConfigError):
        exact_cr_threshold(UnknownVariance(0.1), 0.9545, 2, 2)  # N <= n_p


def test_variance_estimate():
    v = variance_estimate(0.06, N=5, n_p=2)
    assert v.s2 == pytest.approx(0.02)
    with pytest.raises(ConfigError):
        variance_estimate(0.1, N=2, n_p=2)


def test_design_crspec_noise_free_center():
    crspec = design_crspec(builtin_bod(), P_HAT1, [2.0, 2.0, 20.0, 20.0],
                           UnknownVariance(0.1), 0.9545, search_box=BOX1)
    assert crspec.j_hat == 0.0
    assert crspec.excess(P_HAT1) == pytest.approx(-crspec.threshold, rel=1e-14)
    assert cr_membership(crspec, P_HAT1).member
    # far outside
    assert not cr_membership(crspec, [20.0, 4.0]).member


def test_design_crspec_noisy_offset():
    U = [2.0, 2.0, 20.0, 20.0]
    m = builtin_bod()
    y = np.array([evaluate_model(m, P_HAT1, u) for u in U]) + 0.05
    crspec = design_crspec(m, P_HAT1, U, UnknownVariance(0.1), 0.9545,
                           search_box=BOX1, y=y)
    assert crspec.j_hat == pytest.approx(4 * 0.05**2, rel=1e-12)
    # threshold keeps the design-time constant
    assert crspec.threshold == pytest.approx(0.4195604395604398, abs=1e-12)


def test_membership_excess_sign_consistency():
    crspec = design_crspec(builtin_bod(), P_HAT1, [2.0, 20.0, 5.0],
                           UnknownVariance(0.1), 0.9545, search_box=BOX1)
    rng = np.random.default_rng(2)
    P = np.column_stack([rng.uniform(0.25, 25.0, 200), rng.uniform(0.05, 5.0, 200)])
    ex = crspec.excess_batch(P)
    mem = crspec.membership_batch(P)
    for i in range(200):
        assert mem[i] == (ex[i] <= 1e-9 * max(1.0, crspec.threshold))


def test_linearized_cr_linear_model_is_exact():
    # poly2 is linear in p: the exact region IS the ellipsoid
    m = builtin_poly2()
    p_hat = np.array([1.0, -0.5])
    U = [-1.0, 0.3, 1.0]
    noise = KnownSigma(0.5)
    lin = linearized_cr(m, p_hat, U, noise, 0.9545)
    crspec = design_crspec(m, p_hat, U, noise, 0.9545,
                           search_box=np.array([[-10.0, 10.0], [-10.0, 10.0]]))
    rng = np.random.default_rng(3)
    P = p_hat + rng.normal(scale=2.0, size=(500, 2))
    for p in P:
        assert lin.membership(p) == bool(crspec.excess(p) <= 1e-9 * max(1.0, crspec.threshold))


def test_default_search_box():
    box = default_search_box([2.5, 0.5])
    assert box == pytest.approx(np.array([[0.25, 25.0], [0.05, 5.0]]))
    # negative parameter keeps lo < hi
    box = default_search_box([-2.0])
    assert box[0, 0] < box[0, 1]


def test_least_squares_fit_recovers_parameters():
    m = builtin_bod()
    U = [1.0, 2.0, 5.0, 20.0]
    truth = np.array([2.3, 0.7])
    ds = bod_dataset(U, KnownSigma(0.1), p=truth)
    fit = least_squares_fit(m, ds, p0=[1.0, 1.0], solver_settings={"search_box": BOX1})
    assert fit == pytest.approx(truth, abs=1e-6)
