"""Run configs, experiment writers, and the command-line contract.

Solver-heavy paths stick to classical N=2 rows on the second-order model
so the whole module stays fast; the CLI is exercised in-process through
``main(argv)`` to keep exit codes and monkeypatching testable.
"""

import csv
import json
import os

import numpy as np
import pytest

import exactoed.experiments as experiments
from exactoed.cli import main
from exactoed.config import CaseRow, case_defaults, load_config, parse_config
from exactoed.errors import ConfigError, VerificationFailure
from exactoed.experiments import robustness_study

REPO = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def read_json(path):
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)


def read_rows(path):
    with open(path, "r", encoding="utf-8", newline="") as handle:
        return list(csv.reader(handle))


# --- config parsing ----------------------------------------------------------

def test_case_defaults_copy_isolated():
    a = case_defaults("bod")
    a["alpha"] = 0.5
    assert case_defaults("bod")["alpha"] == 0.9545
    assert case_defaults("not-a-model") == {}


def test_parse_minimal():
    config = parse_config(case_defaults("bod"))
    assert config.model_id == "bod"
    assert config.alpha == 0.9545
    assert config.search_box.shape == (2, 2)
    assert config.rows == ()


def test_parse_rejects_unknown_key():
    data = case_defaults("bod")
    data["speling"] = 1
    with pytest.raises(ConfigError):
        parse_config(data)


def test_parse_rejects_bad_rows():
    base = case_defaults("second-order")
    for row in (
        {"method": "annealing", "criterion": "A", "N": 2},
        {"method": "kkt", "criterion": "D", "N": 2},
        {"method": "ellipsoidal", "criterion": "A", "N": 2},
        {"method": "exact", "criterion": "Q", "N": 2},
        {"method": "exact", "criterion": "A", "N": 0},
        {"method": "exact", "criterion": "A", "N": 2, "initial_design": [1.0, 2.0, 3.0]},
        {"method": "exact", "criterion": "A"},
    ):
        data = dict(base)
        data["rows"] = [row]
        with pytest.raises(ConfigError):
            parse_config(data)


def test_parse_rejects_bad_noise():
    data = case_defaults("bod")
    data["noise"] = {"kind": "student-t", "sigma": [0.1]}
    with pytest.raises(ConfigError):
        parse_config(data)
    data["noise"] = {"kind": "known"}
    with pytest.raises(ConfigError):
        parse_config(data)


def test_parse_rejects_bad_settings_and_box():
    data = case_defaults("bod")
    data["settings"] = {"n_startz": 4}
    with pytest.raises(ConfigError):
        parse_config(data)
    data = case_defaults("bod")
    data["search_box"] = [[0.25, 25.0]]
    with pytest.raises(ConfigError):
        parse_config(data)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_shipped_configs_validate():
    case1 = load_config(os.path.join(REPO, "configs", "case1.json"))
    case2 = load_config(os.path.join(REPO, "configs", "case2.json"))
    assert len(case1.rows) == 14 and case1.model_id == "bod"
    assert len(case2.rows) == 21 and case2.model_id == "second-order"
    for config in (case1, case2):
        labels = [row.label for row in config.rows]
        assert len(labels) == len(set(labels))


def test_epsilon_overrides():
    config = parse_config(case_defaults("second-order"))
    assert config.problem("D", 2).epsilon == 0.075
    assert config.problem("D", 2, epsilon=0.02).epsilon == 0.02
    row = CaseRow(method="exact", criterion="D", N=2, epsilon=0.01)
    assert config.row_problem(row).epsilon == 0.01


# --- CLI: quantile and argument handling -------------------------------------

def test_cli_quantile_chi2(capsys):
    assert main(["quantile", "--dist", "chi2", "--alpha", "0.9545", "--dof", "2"]) == 0
    assert capsys.readouterr().out.strip() == "6.180085906050465"


def test_cli_quantile_f(capsys):
    assert main(["quantile", "--dist", "f", "--alpha", "0.9545", "--dof1", "2", "--dof2", "2"]) == 0
    assert capsys.readouterr().out.strip() == "20.978021978021985"


def test_cli_quantile_missing_dof(capsys):
    assert main(["quantile", "--dist", "chi2", "--alpha", "0.9545"]) == 2
    assert "config error" in capsys.readouterr().err


def test_cli_no_model(capsys):
    code = main(["robustness", "--u", "1.0,2.0"])
    assert code == 2
    assert "no model" in capsys.readouterr().err


def test_cli_unknown_model(capsys):
    assert main(["robustness", "--model", "cubic", "--u", "1.0,2.0"]) == 2


def test_cli_bad_u_list(capsys, tmp_path):
    code = main(["robustness", "--model", "second-order", "--u", "1.0;2.0",
                 "--out", str(tmp_path)])
    assert code == 2


# --- CLI: design and table ----------------------------------------------------

def run_design(out_dir):
    return main([
        "design", "--model", "second-order", "--method", "classical",
        "--criterion", "a", "--n", "2", "--out", str(out_dir),
    ])


def test_cli_design_writes_result(tmp_path, capsys):
    out = tmp_path / "runA"
    assert run_design(out) == 0
    doc = read_json(out / "design_classical_A_N2.json")
    for key in ("criterion", "method", "N", "U_star", "objective_exact",
                "objective_surrogate", "iterations", "certificates", "seed", "runtime_s"):
        assert key in doc
    assert doc["method"] == "classical" and doc["criterion"] == "A" and doc["N"] == 2
    np.testing.assert_allclose(doc["U_star"], [1.9135, 10.0], atol=1.5e-3)
    assert doc["objective_exact"] == pytest.approx(1.665809, rel=1e-4)
    assert doc["objective_surrogate"] > 0
    assert "U* = [" in capsys.readouterr().out


def test_cli_design_deterministic_modulo_runtime(tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert run_design(out_a) == 0
    assert run_design(out_b) == 0
    doc_a = read_json(out_a / "design_classical_A_N2.json")
    doc_b = read_json(out_b / "design_classical_A_N2.json")
    doc_a.pop("runtime_s"), doc_b.pop("runtime_s")
    assert json.dumps(doc_a, sort_keys=True) == json.dumps(doc_b, sort_keys=True)


def table_config(tmp_path, rows):
    data = case_defaults("second-order")
    data["rows"] = rows
    path = tmp_path / "run.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


def test_cli_table_and_determinism(tmp_path):
    cfg = table_config(tmp_path, [
        {"method": "classical", "criterion": "A", "N": 2},
        {"method": "classical", "criterion": "D", "N": 2},
    ])
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(["table", "--config", str(cfg), "--out", str(out_a)]) == 0
    assert main(["table", "--config", str(cfg), "--out", str(out_b)]) == 0

    rows = read_rows(out_a / "table.csv")
    assert rows[0] == ["family", "criterion", "N", "u1", "u2", "phi_exact"]
    assert len(rows) == 3
    assert rows[1][:3] == ["classical", "A", "2"]
    assert float(rows[1][-1]) == pytest.approx(1.665809, rel=1e-4)
    assert float(rows[2][-1]) == pytest.approx(0.376875, rel=1e-4)

    # byte-identical table; design docs identical once runtime is masked
    with open(out_a / "table.csv", "rb") as fa, open(out_b / "table.csv", "rb") as fb:
        assert fa.read() == fb.read()


def test_cli_table_solver_failure_exit_3(tmp_path, capsys):
    # the two-sample region at sigma = 1 reaches the search-box edge, which
    # the exact driver reports as a solver failure; the row must be recorded
    data = case_defaults("poly2")
    data["rows"] = [{"method": "exact", "criterion": "A", "N": 2}]
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps(data), encoding="utf-8")
    out = tmp_path / "out"
    assert main(["table", "--config", str(cfg), "--out", str(out)]) == 3
    assert "FAILED" in capsys.readouterr().out

    rows = read_rows(out / "table.csv")
    assert len(rows) == 2 and rows[1][-1] == ""   # counted, not dropped
    doc = read_json(out / "design_exact_A_N2.json")
    assert doc["status"] == "failed" and doc["error"].startswith("SolverFailure")


def test_cli_table_verification_failure_exit_4(tmp_path, monkeypatch):
    def boom(problem, row, seed):
        raise VerificationFailure("embedded anchors disagree with the re-solve")

    monkeypatch.setattr(experiments, "_solve_row", boom)
    cfg = table_config(tmp_path, [{"method": "classical", "criterion": "A", "N": 2}])
    assert main(["table", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 4


def test_cli_table_empty_rows_exit_2(tmp_path):
    cfg = table_config(tmp_path, [])
    assert main(["table", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 2


# --- CLI: robustness ----------------------------------------------------------

def test_cli_robustness_roundtrip(tmp_path, capsys):
    out = tmp_path / "rob"
    code = main([
        "robustness", "--model", "second-order", "--u", "1.69,10",
        "--trials", "6", "--seed", "3", "--rays", "64", "--out", str(out),
    ])
    assert code == 0
    assert "phi_D: nominal" in capsys.readouterr().out

    rows = read_rows(out / "robustness.csv")
    assert rows[0] == ["trial", "phi_A", "phi_D", "phi_E"]
    assert len(rows) == 7
    doc = read_json(out / "robustness.json")
    assert doc["trials"] == 6 and doc["seed"] == 3 and doc["n_failed"] == 0

    # aggregates must be recomputable from the per-trial file
    per_trial = {c: [] for c in ("A", "D", "E")}
    for row in rows[1:]:
        for c, cell in zip(("A", "D", "E"), row[1:]):
            per_trial[c].append(float(cell))
    for c in ("A", "D", "E"):
        vals = np.asarray(per_trial[c])
        assert doc["mean"][c] == pytest.approx(vals.mean(), rel=1e-12)
        assert doc["variance"][c] == pytest.approx(vals.var(ddof=1), rel=1e-12)
        assert doc["worst"][c] == pytest.approx(vals.max(), rel=1e-12)


def test_cli_robustness_deterministic(tmp_path):
    args = ["robustness", "--model", "second-order", "--u", "1.69,10",
            "--trials", "5", "--seed", "11", "--rays", "64"]
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(args + ["--out", str(out_a)]) == 0
    assert main(args + ["--out", str(out_b)]) == 0
    for name in ("robustness.csv", "robustness.json"):
        with open(out_a / name, "rb") as fa, open(out_b / name, "rb") as fb:
            assert fa.read() == fb.read()


def test_robustness_trials_are_prefix_stable():
    # trial k draws from substream(k), so a longer run extends a shorter one
    config = parse_config(case_defaults("second-order"))
    problem = config.problem("D", 2)
    U = np.array([1.69, 10.0])
    short = robustness_study(problem, U, trials=3, seed=7, rays=64)
    long = robustness_study(problem, U, trials=6, seed=7, rays=64)
    for c in ("A", "D", "E"):
        np.testing.assert_array_equal(short.phi[c], long.phi[c][:3])


def test_robustness_zero_noise_reproduces_nominal():
    config = parse_config(case_defaults("second-order"))
    problem = config.problem("D", 2)
    report = robustness_study(problem, np.array([1.69, 10.0]), trials=4, seed=5,
                              rays=64, noise_sigma=0.0)
    assert report.n_failed == 0
    for c in ("A", "D", "E"):
        np.testing.assert_array_equal(report.phi[c], np.full(4, report.nominal[c]))


def test_cli_robustness_from_design_file(tmp_path):
    out = tmp_path / "design"
    assert run_design(out) == 0
    design_path = out / "design_classical_A_N2.json"
    code = main(["robustness", "--model", "second-order", "--design", str(design_path),
                 "--trials", "3", "--rays", "64", "--out", str(tmp_path / "rob")])
    assert code == 0
    doc = read_json(tmp_path / "rob" / "robustness.json")
    np.testing.assert_allclose(doc["U"], read_json(design_path)["U_star"])


# --- CLI: plot-data -------------------------------------------------------------

def test_cli_plot_data(tmp_path, capsys):
    out = tmp_path / "case"
    code = main(["plot-data", "--model", "second-order", "--u", "1.69,10",
                 "--out", str(out)])
    assert code == 0
    plots = out / "plots"
    names = {"boundary.csv", "ellipse.csv", "ellipse_outer.csv", "ellipse_inner.csv",
             "orthotope.csv", "anchors.csv", "pair.csv"}
    assert {p.name for p in plots.iterdir()} == names

    # boundary vertices must lie on the region boundary
    rows = read_rows(plots / "boundary.csv")
    P = np.array([[float(r[-2]), float(r[-1])] for r in rows[1:]])
    config = parse_config(case_defaults("second-order"))
    crspec = config.problem("A", 2).crspec(np.array([1.69, 10.0]))
    excess = crspec.excess_batch(P)
    assert np.max(np.abs(excess)) <= 1e-6 * max(1.0, crspec.threshold)

    # closed polylines: orthotope is a 4-corner loop repeated at the start
    corners = read_rows(plots / "orthotope.csv")
    assert len(corners) == 6 and corners[1] == corners[-1]
