"""End-to-end acceptance gate for the toolkit: one test per criterion.

Each test prints a single machine-grepable ``[criterion NN] PASS/FAIL``
line (visible with ``pytest -s`` or in failure output) and asserts the
same condition, so ``pytest -v tests/test_acceptance.py`` reads as the
acceptance checklist.  Reference designs and criterion values are the
frozen case-study targets the package is built to reproduce:

* case 1 -- exponential saturation model, four/five samples, unknown
  noise variance (F-statistic threshold);
* case 2 -- second-order step response, two/three/four samples, known
  noise variance (chi-squared threshold).

The heavy design solves are shared through module-scoped fixtures: the
rows come straight from the shipped run configs (including their pinned
starts, which select the conventional local optimum where determinant
ties or sibling basins exist), so this gate also certifies the configs.
"""

import os
import time

import numpy as np
import pytest

import test_sensitivity as sens
from exactoed.config import load_config, parse_config, case_defaults
from exactoed.design import (
    classical_design,
    ellipsoidal_d_design,
    exact_a_design_kkt,
    exact_design_nested,
)
from exactoed.experiments import robustness_study, run_case_study
from exactoed.geometry import (
    anchor_points,
    bounding_orthotope,
    ellipsoid_scalings,
    farthest_pair,
    grid_volume,
)
from exactoed.stats import chi2_quantile, f_quantile

REPO = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
ALPHA = 0.9545


def gate(num, ok, detail):
    print(f"[criterion {num:02d}] {'PASS' if ok else 'FAIL'}: {detail}", flush=True)
    assert ok, f"criterion {num}: {detail}"


def pick(config, *keys):
    rows = []
    for method, criterion, n in keys:
        row = next((r for r in config.rows
                    if r.method == method and r.criterion == criterion and r.N == n), None)
        assert row is not None, f"config has no row {method}/{criterion}/N={n}"
        rows.append(row)
    return rows


def timed_run(config, rows):
    marks = [time.perf_counter()]
    outcomes = run_case_study(config, rows=rows,
                              progress=lambda _: marks.append(time.perf_counter()))
    return {o.label: (o, dt) for o, dt in zip(outcomes, np.diff(marks))}


@pytest.fixture(scope="module")
def case1_config():
    return load_config(os.path.join(REPO, "configs", "case1.json"))


@pytest.fixture(scope="module")
def case2_config():
    return load_config(os.path.join(REPO, "configs", "case2.json"))


@pytest.fixture(scope="module")
def case1_runs(case1_config):
    rows = pick(
        case1_config,
        ("classical", "A", 4), ("classical", "A", 5),
        ("classical", "D", 4), ("classical", "D", 5),
        ("classical", "E", 4), ("classical", "E", 5),
        ("ellipsoidal", "D", 4), ("ellipsoidal", "D", 5),
        ("exact", "A", 4), ("exact", "D", 4), ("exact", "E", 4),
    )
    return timed_run(case1_config, rows)


@pytest.fixture(scope="module")
def case2_runs(case2_config):
    rows = pick(
        case2_config,
        *[("classical", c, n) for c in "ADE" for n in (2, 3, 4)],
        ("exact", "A", 2), ("exact", "E", 3),
    )
    return timed_run(case2_config, rows)


def row_check(runs, label, U_ref, phi_ref, phi_rtol, t_max):
    """(ok, detail) for one reproduced row vs its reference values."""
    outcome, seconds = runs[label]
    if not outcome.ok:
        return False, f"{label}: {outcome.error}"
    du = np.nan
    ok = True
    if U_ref is not None:
        du = float(np.max(np.abs(np.sort(outcome.result.U) - np.asarray(U_ref))))
        ok &= du <= 0.02 + 1e-9
    dphi = (outcome.phi_exact - phi_ref) / phi_ref
    ok &= abs(dphi) <= phi_rtol
    ok &= seconds < t_max
    return ok, f"{label}: dU={du:.4f} dphi={dphi:+.2%} {seconds:.0f}s"


def test_criterion_01_quantiles():
    chi2 = chi2_quantile(ALPHA, 2)
    f22 = f_quantile(ALPHA, 2, 2)
    ok = (
        abs(chi2 - 6.18008) <= 1e-5
        and abs(f22 - 20.97802) <= 1e-4
        and chi2 == pytest.approx(-2.0 * np.log(1.0 - ALPHA), rel=1e-12)
        and f22 == pytest.approx(ALPHA / (1.0 - ALPHA), rel=1e-12)
    )
    gate(1, ok, f"chi2(0.9545,2)={chi2:.6f} F(0.9545,2,2)={f22:.6f}")


def test_criterion_02_classical_reference_rows(case1_runs):
    targets = [
        ("classical_A_N4", [1.69, 1.69, 20, 20], 1.610, 0.02),
        ("classical_A_N5", [1.77, 1.77, 20, 20, 20], 0.940, 0.02),
        ("classical_D_N4", [2, 2, 20, 20], 0.425, 0.05),
        ("classical_D_N5", [2, 2, 20, 20, 20], 0.155, 0.05),
        ("classical_E_N4", [1.61, 20, 20, 20], 1.016, 0.02),
        ("classical_E_N5", [1.75, 20, 20, 20, 20], 0.365, 0.02),
    ]
    checks = [row_check(case1_runs, label, U_ref, phi_ref, rtol, t_max=300)
              for label, U_ref, phi_ref, rtol in targets]
    gate(2, all(ok for ok, _ in checks), "; ".join(d for _, d in checks))


def test_criterion_03_exact_reference_rows(case1_runs):
    checks = [
        row_check(case1_runs, "exact_A_N4", [1.37, 1.37, 20, 20], 1.585, 0.02, t_max=900),
        row_check(case1_runs, "exact_E_N4", [1.04, 1.04, 20, 20], 0.974, 0.02, t_max=900),
        # repeated low samples are interchangeable for D, so phi only
        row_check(case1_runs, "exact_D_N4", None, 0.409, 0.05, t_max=1800),
    ]
    gate(3, all(ok for ok, _ in checks), "; ".join(d for _, d in checks))


def test_criterion_04_ellipsoidal_rows(case1_runs):
    checks = [
        row_check(case1_runs, "ellipsoidal_D_N4", None, 0.414, 0.05, t_max=900),
        row_check(case1_runs, "ellipsoidal_D_N5", None, 0.154, 0.05, t_max=900),
    ]
    ok = all(c for c, _ in checks)
    details = [d for _, d in checks]
    for n in (4, 5):
        ell = case1_runs[f"ellipsoidal_D_N{n}"][0].phi_exact
        cla = case1_runs[f"classical_D_N{n}"][0].phi_exact
        ok &= ell <= cla
        details.append(f"N={n}: ellipsoidal {ell:.6f} <= classical {cla:.6f}")
    gate(4, ok, "; ".join(details))


def test_criterion_05_second_case_rows(case2_runs):
    targets = [
        ("classical_A_N2", [1.91, 10], 1.666, 0.02),
        ("classical_A_N3", [1.86, 1.86, 10], 1.151, 0.02),
        ("classical_A_N4", [1.81, 1.81, 1.81, 10], 0.974, 0.02),
        ("classical_D_N2", [2, 10], 0.386, 0.05),
        ("classical_D_N3", [2, 2, 10], 0.231, 0.05),
        ("classical_D_N4", [2, 2, 10, 10], 0.148, 0.05),
        ("classical_E_N2", [1.90, 10], 1.225, 0.02),
        ("classical_E_N3", [1.82, 1.82, 10], 0.520, 0.02),
        ("classical_E_N4", [1.74, 1.74, 1.74, 10], 0.341, 0.02),
    ]
    checks = [row_check(case2_runs, label, U_ref, phi_ref, rtol, t_max=300)
              for label, U_ref, phi_ref, rtol in targets]
    # spot values for the exact family
    checks.append(row_check(case2_runs, "exact_A_N2", [1.63, 10], 1.584, 0.02, t_max=900))
    checks.append(row_check(case2_runs, "exact_E_N3", None, 0.497, 0.02, t_max=900))
    gate(5, all(ok for ok, _ in checks), "; ".join(d for _, d in checks))


def test_criterion_06_kkt_equivalence(case1_config, case2_config, case1_runs, case2_runs):
    details, ok = [], True
    for config, runs, tag in ((case1_config, case1_runs, "case1 N=4"),
                              (case2_config, case2_runs, "case2 N=2")):
        nested = runs[f"exact_A_N{2 if '2' in tag else 4}"][0].result
        row = pick(config, ("exact", "A", nested.N))[0]
        kkt = exact_a_design_kkt(config.row_problem(row), seed=config.seed)
        du = float(np.max(np.abs(np.sort(kkt.U) - np.sort(nested.U))))
        dphi = abs(kkt.phi - nested.phi) / abs(nested.phi)
        ok &= kkt.converged and du <= 1e-3 and dphi <= 1e-4
        details.append(f"{tag}: dU={du:.2e} dphi_rel={dphi:.2e}")
    gate(6, ok, "; ".join(details))


def test_criterion_07_linear_model_collapse():
    data = case_defaults("poly2")
    data["noise"] = {"kind": "known", "sigma": [0.3]}  # region inside the box
    config = parse_config(data)
    details, ok = [], True

    U_classical = {}
    for criterion in "ADE":
        problem = config.problem(criterion, 2)
        U_classical[criterion] = classical_design(problem, seed=0).U
        exact = exact_design_nested(problem, seed=0)
        du = float(np.max(np.abs(exact.U - U_classical[criterion])))
        ok &= du <= 1e-4
        details.append(f"exact {criterion}: dU={du:.1e}")
    ell = ellipsoidal_d_design(config.problem("D", 2), seed=0)
    du = float(np.max(np.abs(ell.U - U_classical["D"])))
    ok &= du <= 1e-4
    details.append(f"ellipsoidal D: dU={du:.1e}")

    # membership: the exact region of a linear model is the ellipsoid
    problem = config.problem("D", 2)
    U = U_classical["D"]
    crspec = problem.crspec(U)
    F = problem.fim(U).matrix
    c = crspec.threshold
    radius = np.sqrt(c / np.linalg.eigvalsh(F)[0])
    rng = np.random.default_rng(2026)
    probes = crspec.p_hat + rng.uniform(-1.5 * radius, 1.5 * radius, size=(1000, 2))
    d = probes - crspec.p_hat
    in_ellipsoid = np.einsum("ij,jk,ik->i", d, F, d) <= c
    in_region = crspec.excess_batch(probes) <= 0.0
    disagreements = int(np.sum(in_ellipsoid != in_region))
    ok &= disagreements == 0
    details.append(f"membership disagreements: {disagreements}/1000")
    gate(7, ok, "; ".join(details))


def test_criterion_08_geometry_closed_forms():
    data = case_defaults("poly2")
    data["noise"] = {"kind": "known", "sigma": [0.3]}
    config = parse_config(data)
    problem = config.problem("D", 3)
    U = np.array([-1.0, 0.6, 1.0])  # asymmetric: distinct eigenvalues
    crspec = problem.crspec(U)
    settings = problem.settings
    F = problem.fim(U).matrix
    c = crspec.threshold
    C = np.linalg.inv(F)
    lam = np.linalg.eigvalsh(F)

    anch = anchor_points(crspec, settings)
    widths = anch.ranges[:, 1] - anch.ranges[:, 0]
    err_rng = float(np.max(np.abs(widths - 2.0 * np.sqrt(c * np.diag(C)))
                           / (2.0 * np.sqrt(c * np.diag(C)))))
    pair = farthest_pair(crspec, settings)
    err_e = abs(pair.phi_E - 4.0 * c / lam[0]) / (4.0 * c / lam[0])
    sc = ellipsoid_scalings(crspec, F, settings)
    err_k = max(abs(sc.k_out - c), abs(sc.k_in - c)) / c

    a, b = np.sqrt(c / lam)  # semi-axes (a >= b after this unpacking order)
    eps = min(a, b) / 50.0
    vol = grid_volume(crspec, bounding_orthotope(anch), eps, settings.cell_budget)
    err_vol = abs(vol.phi_D_hat - np.pi * a * b) / (np.pi * a * b)

    ok = err_rng <= 1e-6 and err_e <= 1e-6 and err_k <= 1e-6 and err_vol <= 0.02
    gate(8, ok, f"ranges {err_rng:.1e}; phi_E {err_e:.1e}; k_out/k_in {err_k:.1e}; "
                f"ellipse volume {err_vol:.2%} at eps={eps:.4f}")


def test_criterion_09_sensitivities_vs_fd():
    errs = {
        "extremes": sens.extreme_family_error(sens.bod_problem("A"), sens.U_EXACT_A4),
        "pair": sens.pair_family_error(sens.bod_problem("E"), sens.U_EXACT_E4),
        "scaling_out": sens.scaling_family_error(sens.bod_problem("D"), sens.U_ELLIPS_D4, "out"),
        "scaling_in": sens.scaling_family_error(sens.bod_problem("D"), sens.U_ELLIPS_D4, "in"),
    }
    ok = all(err <= 1e-4 for err in errs.values())
    gate(9, ok, "; ".join(f"{k}={v:.2e}" for k, v in errs.items()))


def test_criterion_10_robustness_orderings(case1_config, case1_runs):
    t0 = time.perf_counter()
    problem = case1_config.problem("D", 4)
    designs = {
        ("classical", "A"): case1_runs["classical_A_N4"][0].result.U,
        ("classical", "D"): case1_runs["classical_D_N4"][0].result.U,
        ("classical", "E"): case1_runs["classical_E_N4"][0].result.U,
        ("exact", "A"): case1_runs["exact_A_N4"][0].result.U,
        ("exact", "D"): case1_runs["exact_D_N4"][0].result.U,
        ("exact", "E"): case1_runs["exact_E_N4"][0].result.U,
        ("ellipsoidal", "D"): case1_runs["ellipsoidal_D_N4"][0].result.U,
    }
    reports = {
        key: robustness_study(problem, U, trials=1000, seed=case1_config.robustness_seed)
        for key, U in designs.items()
    }
    minutes = (time.perf_counter() - t0) / 60.0

    def mean(method, criterion):
        return reports[(method, criterion)].mean[criterion]

    def var(method, criterion):
        return reports[(method, criterion)].variance[criterion]

    checks = {
        "mean_D exact<=ellipsoidal<=classical":
            mean("exact", "D") <= mean("ellipsoidal", "D") <= mean("classical", "D"),
        "mean_A exact<=classical": mean("exact", "A") <= mean("classical", "A"),
        "mean_E exact<=classical": mean("exact", "E") <= mean("classical", "E"),
        "var_A classical max": var("classical", "A") >= var("exact", "A"),
        "var_D classical max":
            var("classical", "D") >= max(var("exact", "D"), var("ellipsoidal", "D")),
        "var_E classical max": var("classical", "E") >= var("exact", "E"),
        "runtime<20min": minutes < 20.0,
    }
    failed_trials = sum(r.n_failed for r in reports.values())
    ok = all(checks.values()) and failed_trials == 0
    detail = "; ".join(f"{name} {'ok' if good else 'VIOLATED'}" for name, good in checks.items())
    gate(10, ok, f"{detail}; failed trials {failed_trials}; {minutes:.1f} min")
