"""Run configuration: JSON files mapped onto validated problem builders.

A run file describes one case study: the model (by registry id), the
nominal estimate, the noise regime, the confidence level, and a list of
design rows (method x criterion x N, optionally with pinned initial
designs).  Everything is validated up front so a typo fails before any
compute starts, and the same config drives the `table`, `robustness`,
and `plot-data` commands — one source of truth per case.

Initial-design pins are config data, not code: rows whose optimum has
sibling local solutions of identical objective (repeated-sample
determinant ties) or a deeper basin elsewhere record the start that
selects the conventional representative.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .design import DesignProblem
from .errors import ConfigError
from .estimation import KnownSigma, UnknownVariance
from .geometry import GeometrySettings
from .models import ModelSpec, get_model

__all__ = ["CaseRow", "RunConfig", "load_config", "parse_config", "case_defaults"]

# flag-only CLI runs fall back to these per-model baselines (nominal
# estimate, noise regime, search box, grid pitch of the bundled cases)
_CASE_DEFAULTS = {
    "bod": {
        "model": "bod",
        "p_hat": [2.5, 0.5],
        "noise": {"kind": "unknown", "sigma_design": 0.1},
        "alpha": 0.9545,
        "search_box": [[0.25, 25.0], [0.05, 5.0]],
        "epsilon": 0.005,
    },
    "second-order": {
        "model": "second-order",
        "p_hat": [0.5, 1.0],
        "noise": {"kind": "known", "sigma": [0.4]},
        "alpha": 0.9545,
        "search_box": [[0.05, 5.0], [0.1, 10.0]],
        "epsilon": 0.075,
    },
    "poly2": {
        "model": "poly2",
        "p_hat": [1.0, 1.0],
        "noise": {"kind": "known", "sigma": [1.0]},
        "alpha": 0.9545,
        "epsilon": 0.02,
    },
}


def case_defaults(model_id: str) -> dict:
    """Baseline config data for a built-in model id ({} when unknown)."""
    return copy.deepcopy(_CASE_DEFAULTS.get(model_id, {}))

_METHODS = ("classical", "exact", "ellipsoidal", "kkt")

_TOP_KEYS = {
    "model", "constants", "p_hat", "noise", "alpha", "input_bounds",
    "search_box", "epsilon", "seed", "out", "settings", "rows", "robustness",
}
_ROW_KEYS = {"method", "criterion", "N", "initial_design", "initial_designs", "epsilon"}
_NOISE_KEYS = {"kind", "sigma", "sigma_design"}
_ROBUSTNESS_KEYS = {"trials", "seed"}


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


def _check_keys(mapping: dict, allowed: set, where: str) -> None:
    unknown = set(mapping) - allowed
    _require(not unknown, f"unknown {where} keys: {sorted(unknown)} (allowed: {sorted(allowed)})")


@dataclass(frozen=True)
class CaseRow:
    """One requested table row: solve `method`/`criterion` at `N` samples."""

    method: str
    criterion: str
    N: int
    initial_design: Optional[np.ndarray] = None  # exact/ellipsoidal/kkt pin
    initial_designs: Optional[tuple] = None  # classical multistart pins
    epsilon: Optional[float] = None  # per-row override of the grid pitch

    def __post_init__(self):
        _require(self.method in _METHODS, f"method must be one of {_METHODS}, got {self.method!r}")
        _require(self.criterion in ("A", "D", "E"),
                 f"criterion must be A, D or E, got {self.criterion!r}")
        _require(int(self.N) == self.N and self.N >= 1, f"N must be a positive integer, got {self.N}")
        _require(self.method != "ellipsoidal" or self.criterion == "D",
                 "the ellipsoidal method only applies to the D criterion")
        _require(self.method != "kkt" or self.criterion == "A",
                 "the kkt method only applies to the A criterion")
        if self.initial_design is not None:
            U0 = np.asarray(self.initial_design, dtype=float).reshape(-1)
            _require(U0.size == self.N, f"initial_design has {U0.size} entries for N={self.N}")
            object.__setattr__(self, "initial_design", U0)
        if self.initial_designs is not None:
            pins = tuple(np.asarray(u, dtype=float).reshape(-1) for u in self.initial_designs)
            for U0 in pins:
                _require(U0.size == self.N, f"initial_designs entry has {U0.size} entries for N={self.N}")
            object.__setattr__(self, "initial_designs", pins)

    @property
    def label(self) -> str:
        return f"{self.method}_{self.criterion}_N{self.N}"


@dataclass(frozen=True)
class RunConfig:
    """A validated run: model + noise + rows, ready to build DesignProblems."""

    model: ModelSpec
    model_id: str
    p_hat: np.ndarray
    noise: object
    alpha: float
    input_bounds: Optional[tuple]
    search_box: Optional[np.ndarray]
    epsilon: Optional[float]
    seed: int
    out: str
    settings: GeometrySettings
    rows: tuple = field(default_factory=tuple)
    robustness_trials: int = 1000
    robustness_seed: int = 1

    def problem(self, criterion: str, N: int, epsilon: Optional[float] = None) -> DesignProblem:
        eps = epsilon if epsilon is not None else self.epsilon
        return DesignProblem(
            model=self.model,
            p_hat=self.p_hat,
            noise=self.noise,
            alpha=self.alpha,
            N=int(N),
            criterion=criterion,
            u_bounds=self.input_bounds,
            search_box=self.search_box,
            epsilon=eps,
            settings=self.settings,
        )

    def row_problem(self, row: CaseRow) -> DesignProblem:
        return self.problem(row.criterion, row.N, row.epsilon)


def _parse_noise(raw) -> object:
    _require(isinstance(raw, dict), "noise must be an object with a 'kind' field")
    _check_keys(raw, _NOISE_KEYS, "noise")
    kind = raw.get("kind")
    if kind == "known":
        _require("sigma" in raw, "known noise needs 'sigma'")
        return KnownSigma(np.atleast_1d(np.asarray(raw["sigma"], dtype=float)))
    if kind == "unknown":
        _require("sigma_design" in raw, "unknown-variance noise needs 'sigma_design'")
        return UnknownVariance(float(raw["sigma_design"]))
    raise ConfigError(f"noise kind must be 'known' or 'unknown', got {kind!r}")


def _parse_settings(raw) -> GeometrySettings:
    if raw is None:
        return GeometrySettings()
    _require(isinstance(raw, dict), "settings must be an object")
    allowed = set(GeometrySettings.__dataclass_fields__)
    _check_keys(raw, allowed, "settings")
    return replace(GeometrySettings(), **raw)


def _parse_row(raw, default_epsilon) -> CaseRow:
    _require(isinstance(raw, dict), "each row must be an object")
    _check_keys(raw, _ROW_KEYS, "row")
    for key in ("method", "criterion", "N"):
        _require(key in raw, f"row is missing {key!r}")
    return CaseRow(
        method=str(raw["method"]),
        criterion=str(raw["criterion"]).upper(),
        N=int(raw["N"]),
        initial_design=raw.get("initial_design"),
        initial_designs=raw.get("initial_designs"),
        epsilon=raw.get("epsilon", default_epsilon),
    )


def parse_config(data: dict) -> RunConfig:
    """Validate a parsed JSON object and resolve the model registry id."""
    _require(isinstance(data, dict), "config root must be an object")
    _check_keys(data, _TOP_KEYS, "config")
    for key in ("model", "p_hat", "noise", "alpha"):
        _require(key in data, f"config is missing {key!r}")

    model = get_model(str(data["model"]), data.get("constants"))
    p_hat = np.asarray(data["p_hat"], dtype=float).reshape(-1)
    _require(p_hat.size == model.n_p,
             f"p_hat has {p_hat.size} entries but model {data['model']!r} has {model.n_p} parameters")
    noise = _parse_noise(data["noise"])
    alpha = float(data["alpha"])
    _require(0.0 < alpha < 1.0, f"alpha must lie in (0, 1), got {alpha}")

    input_bounds = data.get("input_bounds")
    if input_bounds is not None:
        _require(len(input_bounds) == 2, "input_bounds must be [lo, hi]")
        input_bounds = (float(input_bounds[0]), float(input_bounds[1]))
    search_box = data.get("search_box")
    if search_box is not None:
        search_box = np.asarray(search_box, dtype=float)
        _require(search_box.shape == (model.n_p, 2),
                 f"search_box must be shaped ({model.n_p}, 2)")
    epsilon = data.get("epsilon")
    if epsilon is not None:
        epsilon = float(epsilon)
        _require(epsilon > 0.0, "epsilon must be > 0")

    robustness = data.get("robustness") or {}
    _require(isinstance(robustness, dict), "robustness must be an object")
    _check_keys(robustness, _ROBUSTNESS_KEYS, "robustness")

    rows = tuple(_parse_row(raw, epsilon) for raw in data.get("rows", []))
    return RunConfig(
        model=model,
        model_id=str(data["model"]),
        p_hat=p_hat,
        noise=noise,
        alpha=alpha,
        input_bounds=input_bounds,
        search_box=search_box,
        epsilon=epsilon,
        seed=int(data.get("seed", 0)),
        out=str(data.get("out", "results")),
        settings=_parse_settings(data.get("settings")),
        rows=rows,
        robustness_trials=int(robustness.get("trials", 1000)),
        robustness_seed=int(robustness.get("seed", 1)),
    )


def load_config(path) -> RunConfig:
    """Read and validate a JSON run file."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = json.load(handle)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config {path} is not valid JSON: {err}") from err
    return parse_config(data)
