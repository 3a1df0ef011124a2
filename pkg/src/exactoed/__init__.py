"""Optimal experiment design against exact nonlinear confidence regions.

The package covers the full pipeline: model registry, quantiles and
noise streams, least-squares estimation and confidence-region specs, a
projected SQP local solver with multistart, exact-region geometry
(anchors, farthest pair, grid volume, ellipsoid scalings), classical
and bilevel design drivers, and the case-study/robustness experiment
layer behind the ``exactoed`` command-line tool.
"""

from .config import CaseRow, RunConfig, case_defaults, load_config, parse_config
from .design import (
    DesignProblem,
    DesignResult,
    classical_design,
    classical_objective,
    ellipsoidal_d_design,
    evaluate_exact_phi,
    exact_a_design_kkt,
    exact_design_nested,
    fiacco_pair_sensitivity,
    fiacco_scaling_sensitivity,
    fiacco_sensitivity,
)
from .errors import (
    ConfigError,
    ExactOedError,
    RegionUnboundedError,
    SolverFailure,
    VerificationFailure,
)
from .estimation import (
    ConfidenceRegionSpec,
    Dataset,
    KnownSigma,
    UnknownVariance,
    cr_membership,
    design_crspec,
    exact_cr_threshold,
    fisher_information,
    least_squares_fit,
    linearized_cr,
)
from .experiments import (
    RobustnessReport,
    RowOutcome,
    export_region_plots,
    robustness_study,
    run_case_study,
    write_case_study,
    write_robustness,
)
from .geometry import (
    AnchorSet,
    EllipsoidScalings,
    FarthestPair,
    GeometrySettings,
    GridVolume,
    anchor_points,
    boundary_trace,
    ellipsoid_scalings,
    farthest_pair,
    grid_volume,
)
from .models import (
    ModelSpec,
    builtin_bod,
    builtin_poly2,
    builtin_second_order,
    evaluate_model,
    get_model,
    input_jacobian,
    param_jacobian,
)
from .stats import NoiseStream, chi2_quantile, f_quantile, gaussian_draws

__version__ = "0.1.0"

__all__ = [
    "AnchorSet",
    "CaseRow",
    "ConfidenceRegionSpec",
    "ConfigError",
    "Dataset",
    "DesignProblem",
    "DesignResult",
    "EllipsoidScalings",
    "ExactOedError",
    "FarthestPair",
    "GeometrySettings",
    "GridVolume",
    "KnownSigma",
    "ModelSpec",
    "NoiseStream",
    "RegionUnboundedError",
    "RobustnessReport",
    "RowOutcome",
    "RunConfig",
    "SolverFailure",
    "UnknownVariance",
    "VerificationFailure",
    "anchor_points",
    "boundary_trace",
    "builtin_bod",
    "builtin_poly2",
    "builtin_second_order",
    "case_defaults",
    "chi2_quantile",
    "classical_design",
    "classical_objective",
    "cr_membership",
    "design_crspec",
    "ellipsoid_scalings",
    "ellipsoidal_d_design",
    "evaluate_exact_phi",
    "evaluate_model",
    "exact_a_design_kkt",
    "exact_cr_threshold",
    "exact_design_nested",
    "export_region_plots",
    "f_quantile",
    "farthest_pair",
    "fiacco_pair_sensitivity",
    "fiacco_scaling_sensitivity",
    "fiacco_sensitivity",
    "fisher_information",
    "gaussian_draws",
    "get_model",
    "grid_volume",
    "input_jacobian",
    "least_squares_fit",
    "linearized_cr",
    "load_config",
    "parse_config",
    "param_jacobian",
    "robustness_study",
    "run_case_study",
    "write_case_study",
    "write_robustness",
]
