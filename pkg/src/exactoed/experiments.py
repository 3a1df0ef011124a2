"""Case-study tables, the robustness Monte Carlo, and plot-data export.

`run_case_study` solves every requested (method, criterion, N) row and
cross-evaluates the *exact* criterion at each optimizer, so classical
designs are scored on the same footing as exact ones — that is how the
reported tables compare methods.  Row failures are captured per row and
never abort the rest of the table.

`robustness_study` stress-tests one fixed design against measurement
noise: each trial draws noisy observations at the design, rebuilds the
confidence region around the *nominal* estimate with the *design-time*
threshold constant (only the data changes; nothing is re-estimated),
and re-evaluates the exact criteria with the dense ray-fan/grid
evaluators.  Per-trial values are persisted so every aggregate can be
recomputed from the artifact.

All file writers emit plain CSV/JSON with shortest round-trip float
representations: identical config + seed reproduces byte-identical
files (wall-clock `runtime_s` inside design JSONs is the one documented
exception).
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .config import CaseRow, RunConfig
from .design import (
    DesignProblem,
    DesignResult,
    classical_design,
    ellipsoidal_d_design,
    evaluate_exact_phi,
    exact_a_design_kkt,
    exact_design_nested,
)
from .errors import ConfigError, ExactOedError
from .estimation import design_crspec, linearized_cr
from .geometry import (
    anchor_points,
    anchor_ranges_fast,
    boundary_trace,
    bounding_orthotope,
    ellipsoid_scalings,
    farthest_pair,
    farthest_pair_fast,
    grid_volume,
)
from .models import evaluate_model
from .stats import NoiseStream, gaussian_draws

__all__ = [
    "RowOutcome",
    "RobustnessReport",
    "run_case_study",
    "write_case_study",
    "robustness_study",
    "write_robustness",
    "export_region_plots",
]

_CRITERIA = ("A", "D", "E")


# ---------------------------------------------------------------------------
# case-study tables


@dataclass(frozen=True)
class RowOutcome:
    """One table row: the request, the solve (if it succeeded), the exact phi."""

    row: CaseRow
    result: Optional[DesignResult]
    phi_exact: float
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def label(self) -> str:
        return self.row.label


def _solve_row(problem: DesignProblem, row: CaseRow, seed: int) -> DesignResult:
    if row.method == "classical":
        return classical_design(problem, initial_designs=row.initial_designs, seed=seed)
    if row.method == "exact":
        return exact_design_nested(problem, initial_design=row.initial_design, seed=seed)
    if row.method == "ellipsoidal":
        return ellipsoidal_d_design(problem, initial_design=row.initial_design, seed=seed)
    return exact_a_design_kkt(problem, initial_design=row.initial_design, seed=seed)


def run_case_study(config: RunConfig, rows=None, progress: Optional[Callable] = None):
    """Solve every row and score it on the exact criterion.

    Returns RowOutcomes in request order.  A row that raises is recorded
    with its error message and nan phi; later rows still run.
    """
    rows = config.rows if rows is None else tuple(rows)
    if not rows:
        raise ConfigError("config has no design rows")
    outcomes = []
    for row in rows:
        try:
            problem = config.row_problem(row)
            result = _solve_row(problem, row, config.seed)
            if row.method == "classical":
                # cross-evaluation: the surrogate optimum scored on the exact region
                phi_exact, _ = evaluate_exact_phi(problem, result.U)
            else:
                phi_exact = result.phi
            outcome = RowOutcome(row=row, result=result, phi_exact=float(phi_exact))
        except ExactOedError as err:
            outcome = RowOutcome(row=row, result=None, phi_exact=float("nan"),
                                 error=f"{type(err).__name__}: {err}")
        outcomes.append(outcome)
        if progress is not None:
            progress(outcome)
    return outcomes


def _fmt(value) -> str:
    """Shortest round-trip decimal for floats; '' for missing cells."""
    if value is None:
        return ""
    if isinstance(value, float) and math.isnan(value):
        return "nan"
    return repr(float(value))


def _write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _dump_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(doc, handle, indent=2, sort_keys=True)
        handle.write("\n")


def _design_doc(outcome: RowOutcome, seed: int) -> dict:
    row = outcome.row
    if not outcome.ok:
        return {
            "method": row.method,
            "criterion": row.criterion,
            "N": row.N,
            "status": "failed",
            "error": outcome.error,
            "seed": seed,
        }
    result = outcome.result
    surrogate = None
    if row.method == "classical":
        surrogate = float(result.phi)
    elif row.method == "ellipsoidal":
        surrogate = result.diagnostics.get("phi_surrogate")
    doc = result.to_dict()
    doc.update(
        {
            "method": row.method,
            "U_star": [float(u) for u in result.U],
            "objective_exact": float(outcome.phi_exact),
            "objective_surrogate": surrogate,
            "certificates": doc.pop("diagnostics"),
            "seed": seed,
        }
    )
    return doc


def write_case_study(config: RunConfig, outcomes, out_dir) -> dict:
    """Persist design_<row>.json per row plus the combined table.csv."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for outcome in outcomes:
        path = os.path.join(out_dir, f"design_{outcome.label}.json")
        _dump_json(path, _design_doc(outcome, config.seed))
        paths[outcome.label] = path

    max_n = max(outcome.row.N for outcome in outcomes)
    header = ["family", "criterion", "N"] + [f"u{i + 1}" for i in range(max_n)] + ["phi_exact"]
    table_rows = []
    for outcome in outcomes:
        row = outcome.row
        cells = [row.method, row.criterion, str(row.N)]
        U = list(outcome.result.U) if outcome.ok else []
        cells += [_fmt(u) for u in U] + [""] * (max_n - len(U))
        cells.append(_fmt(outcome.phi_exact) if outcome.ok else "")
        table_rows.append(cells)
    table_path = os.path.join(out_dir, "table.csv")
    _write_csv(table_path, header, table_rows)
    paths["table"] = table_path
    return paths


# ---------------------------------------------------------------------------
# robustness Monte Carlo


@dataclass(frozen=True)
class RobustnessReport:
    """Per-trial exact criteria of one design under measurement noise.

    `phi[c]` has one entry per trial (nan where the trial failed);
    aggregates are over successful trials only, with failures counted in
    `failed` rather than dropped silently.
    """

    U: np.ndarray
    trials: int
    seed: int
    nominal: dict
    phi: dict
    failed: tuple  # ((trial_index, message), ...)
    mean: dict
    variance: dict
    worst: dict

    @property
    def n_failed(self) -> int:
        return len(self.failed)

    def to_dict(self) -> dict:
        return {
            "U": [float(u) for u in self.U],
            "trials": self.trials,
            "seed": self.seed,
            "n_failed": self.n_failed,
            "failed": [{"trial": int(i), "error": msg} for i, msg in self.failed],
            "nominal": {c: float(v) for c, v in self.nominal.items()},
            "mean": {c: float(v) for c, v in self.mean.items()},
            "variance": {c: float(v) for c, v in self.variance.items()},
            "worst": {c: float(v) for c, v in self.worst.items()},
        }


def _phi_triple(crspec, epsilon: float, rays: int, cell_budget: int) -> dict:
    """phi_A, phi_D-hat, phi_E of one region via the dense evaluators."""
    anch = anchor_ranges_fast(crspec, rays)
    vol = grid_volume(crspec, bounding_orthotope(anch), epsilon, cell_budget)
    pair = farthest_pair_fast(crspec, rays)
    return {"A": float(anch.phi_A), "D": float(vol.phi_D_hat), "E": float(pair.phi_E)}


def robustness_study(problem: DesignProblem, U, trials: int, seed: int,
                     rays: int = 256, noise_sigma=None,
                     progress: Optional[Callable] = None) -> RobustnessReport:
    """Monte Carlo over measurement noise at a fixed design.

    Each trial adds N(0, sigma^2) noise to the noise-free observations,
    rebuilds the region spec with the nominal estimate and the
    design-time threshold (the objective offset J(p_hat) is recomputed
    on the noisy data), and evaluates phi_A / phi_D-hat / phi_E.

    ``noise_sigma`` overrides the simulator's draw scale while keeping
    the design-time thresholds (those always come from problem.noise);
    with noise_sigma = 0 every trial reproduces the nominal values
    bit-for-bit.
    """
    if trials < 1:
        raise ConfigError("robustness needs at least one trial")
    if problem.epsilon is None or problem.epsilon <= 0.0:
        raise ConfigError("robustness needs a positive grid pitch epsilon for phi_D")
    U = np.asarray(U, dtype=float).reshape(-1)
    if U.size != problem.N:
        raise ConfigError(f"design has {U.size} samples but the problem says N={problem.N}")

    model, p_hat = problem.model, problem.p_hat
    budget = problem.settings.cell_budget
    y_clean = np.array([np.atleast_1d(evaluate_model(model, p_hat, u)) for u in U])
    sigma = problem.sigma() if noise_sigma is None else np.broadcast_to(
        np.atleast_1d(np.asarray(noise_sigma, dtype=float)), (model.n_y,))
    stream = NoiseStream(seed, sigma)

    def region(y):
        return design_crspec(model, p_hat, U, problem.noise, problem.alpha,
                             search_box=problem.search_box, y=y)

    nominal = _phi_triple(region(y_clean), problem.epsilon, rays, budget)

    phi = {c: np.full(trials, np.nan) for c in _CRITERIA}
    failed = []
    for trial in range(trials):
        noise = gaussian_draws(stream.substream(trial), U.size)
        try:
            values = _phi_triple(region(y_clean + noise), problem.epsilon, rays, budget)
        except ExactOedError as err:
            failed.append((trial, f"{type(err).__name__}: {err}"))
        else:
            for c in _CRITERIA:
                phi[c][trial] = values[c]
        if progress is not None:
            progress(trial)

    ok = ~np.isnan(phi["A"])
    if not ok.any():
        raise ExactOedError(f"all {trials} robustness trials failed")
    mean = {c: float(np.mean(phi[c][ok])) for c in _CRITERIA}
    variance = {c: float(np.var(phi[c][ok], ddof=1)) if ok.sum() > 1 else 0.0 for c in _CRITERIA}
    worst = {c: float(np.max(phi[c][ok])) for c in _CRITERIA}
    return RobustnessReport(
        U=U,
        trials=trials,
        seed=seed,
        nominal=nominal,
        phi={c: phi[c] for c in _CRITERIA},
        failed=tuple(failed),
        mean=mean,
        variance=variance,
        worst=worst,
    )


def write_robustness(report: RobustnessReport, out_dir) -> dict:
    """Persist per-trial values (robustness.csv) and aggregates (robustness.json)."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "robustness.csv")
    rows = [
        [str(trial)] + [_fmt(float(report.phi[c][trial])) for c in _CRITERIA]
        for trial in range(report.trials)
    ]
    _write_csv(csv_path, ["trial", "phi_A", "phi_D", "phi_E"], rows)
    json_path = os.path.join(out_dir, "robustness.json")
    _dump_json(json_path, report.to_dict())
    return {"csv": csv_path, "json": json_path}


# ---------------------------------------------------------------------------
# plot-data export


def _ellipse_points(p_hat, M, level, n_theta):
    """The curve d^T M d = level around p_hat, as n_theta closed samples."""
    lam, V = np.linalg.eigh(M)
    if lam.min() <= 0.0:
        raise ConfigError("plot export needs a nonsingular information matrix")
    half = V @ np.diag(1.0 / np.sqrt(lam)) @ V.T
    theta = np.linspace(0.0, 2.0 * np.pi, n_theta)
    circle = np.column_stack([np.cos(theta), np.sin(theta)])
    return p_hat[None, :] + np.sqrt(level) * circle @ half.T


def export_region_plots(problem: DesignProblem, U, out_dir, n_theta: int = 256) -> dict:
    """CSV polylines of everything a region figure shows, for one design.

    Exact boundary (marching squares), linearized ellipse, inner/outer
    scaled ellipses, the bounding orthotope, the anchor points, and the
    farthest pair; two columns p1, p2 (boundary adds a loop index).
    """
    if problem.n_p != 2:
        raise ConfigError("plot export requires a two-parameter model")
    U = np.asarray(U, dtype=float).reshape(-1)
    os.makedirs(out_dir, exist_ok=True)
    crspec = problem.crspec(U)
    settings = problem.settings

    anch = anchor_points(crspec, settings)
    pair = farthest_pair(crspec, settings)
    fim = problem.fim(U).matrix
    scal = ellipsoid_scalings(crspec, fim, settings)
    lin = linearized_cr(problem.model, problem.p_hat, U, problem.noise, problem.alpha, N=U.size)

    ranges = anch.ranges
    pad = 0.08 * (ranges[:, 1] - ranges[:, 0])
    box = np.column_stack([ranges[:, 0] - pad, ranges[:, 1] + pad])
    loops = boundary_trace(crspec, box, settings.grid_resolution)

    corners = np.array([
        [ranges[0, 0], ranges[1, 0]],
        [ranges[0, 1], ranges[1, 0]],
        [ranges[0, 1], ranges[1, 1]],
        [ranges[0, 0], ranges[1, 1]],
        [ranges[0, 0], ranges[1, 0]],
    ])

    def xy_rows(points):
        return [[_fmt(p[0]), _fmt(p[1])] for p in np.asarray(points)]

    paths = {}

    def emit(name, header, rows):
        path = os.path.join(out_dir, f"{name}.csv")
        _write_csv(path, header, rows)
        paths[name] = path

    boundary_rows = []
    for index, loop in enumerate(loops):
        boundary_rows += [[str(index), _fmt(p[0]), _fmt(p[1])] for p in loop]
    emit("boundary", ["loop", "p1", "p2"], boundary_rows)
    emit("ellipse", ["p1", "p2"], xy_rows(_ellipse_points(problem.p_hat, lin.M, lin.c, n_theta)))
    emit("ellipse_outer", ["p1", "p2"],
         xy_rows(_ellipse_points(problem.p_hat, fim, scal.k_out, n_theta)))
    emit("ellipse_inner", ["p1", "p2"],
         xy_rows(_ellipse_points(problem.p_hat, fim, scal.k_in, n_theta)))
    emit("orthotope", ["p1", "p2"], xy_rows(corners))
    emit("anchors", ["p1", "p2"], xy_rows(anch.anchors))
    emit("pair", ["p1", "p2"], xy_rows([pair.phi1, pair.phi2]))
    return paths
