"""Command-line front end.

Subcommands:

* ``design``      solve one (method, criterion, N) row and write its JSON
* ``table``       solve every row of a run config and write table.csv
* ``robustness``  Monte Carlo over measurement noise at a fixed design
* ``plot-data``   CSV polylines of the region, ellipses, anchors, pair
* ``quantile``    print a chi-squared or F quantile (debug helper)

Settings resolve in three layers: per-model baselines, then the
``--config`` file, then explicit flags.  Exit codes: 0 success, 2 bad
configuration or arguments, 3 solver failure, 4 verification failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import experiments
from .config import CaseRow, case_defaults, load_config, parse_config
from .errors import ConfigError, SolverFailure, VerificationFailure
from .stats import chi2_quantile, f_quantile

__all__ = ["main"]


def _parse_u_list(text: str) -> list:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as err:
        raise ConfigError(f"cannot parse sample list {text!r}: {err}") from err


def _resolve_config(args):
    """Layer baselines <- config file <- flags into one validated RunConfig."""
    file_data = {}
    if args.config is not None:
        try:
            with open(args.config, "r", encoding="utf-8") as handle:
                file_data = json.load(handle)
        except OSError as err:
            raise ConfigError(f"cannot read config {args.config}: {err}") from err
        except json.JSONDecodeError as err:
            raise ConfigError(f"config {args.config} is not valid JSON: {err}") from err
        if not isinstance(file_data, dict):
            raise ConfigError("config root must be an object")

    model_id = getattr(args, "model", None) or file_data.get("model")
    if model_id is None:
        raise ConfigError("no model: pass --model or a --config with a 'model' field")
    data = case_defaults(str(model_id))
    data.update(file_data)
    data["model"] = str(model_id)
    for key in ("alpha", "epsilon", "seed", "out"):
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    return parse_config(data)


def _load_design_u(path) -> np.ndarray:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            doc = json.load(handle)
    except OSError as err:
        raise ConfigError(f"cannot read design file {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"design file {path} is not valid JSON: {err}") from err
    U = doc.get("U_star", doc.get("U"))
    if U is None:
        raise ConfigError(f"design file {path} has no U_star field")
    return np.asarray(U, dtype=float).reshape(-1)


def _design_from_args(args) -> np.ndarray:
    if args.u is not None:
        return np.asarray(_parse_u_list(args.u), dtype=float)
    if args.design is not None:
        return _load_design_u(args.design)
    raise ConfigError("pass a design via --u or --design")


def _print_outcome(outcome):
    row = outcome.row
    if outcome.ok:
        result = outcome.result
        u_text = ", ".join(f"{u:.4f}" for u in result.U)
        print(
            f"{row.method} {row.criterion} N={row.N}: U* = [{u_text}]  "
            f"phi_exact = {outcome.phi_exact:.6f}  ({result.status}, "
            f"{result.iterations} iters, {result.runtime_s:.1f}s)"
        )
    else:
        print(f"{row.method} {row.criterion} N={row.N}: FAILED - {outcome.error}")


def _outcome_exit_code(outcomes) -> int:
    errors = [o.error for o in outcomes if not o.ok]
    if not errors:
        return 0
    if any(err.startswith("VerificationFailure") for err in errors):
        return 4
    if any(err.startswith("ConfigError") for err in errors):
        return 2
    return 3


def _cmd_design(args) -> int:
    config = _resolve_config(args)
    row = CaseRow(
        method=args.method,
        criterion=args.criterion.upper(),
        N=args.n,
        initial_design=_parse_u_list(args.initial_design) if args.initial_design else None,
        epsilon=config.epsilon,
    )
    outcomes = experiments.run_case_study(config, rows=[row], progress=_print_outcome)
    paths = experiments.write_case_study(config, outcomes, config.out)
    print(f"wrote {paths[row.label]}")
    return _outcome_exit_code(outcomes)


def _cmd_table(args) -> int:
    config = _resolve_config(args)
    outcomes = experiments.run_case_study(config, progress=_print_outcome)
    paths = experiments.write_case_study(config, outcomes, config.out)
    print(f"wrote {paths['table']}")
    return _outcome_exit_code(outcomes)


def _cmd_robustness(args) -> int:
    config = _resolve_config(args)
    U = _design_from_args(args)
    problem = config.problem("D", N=U.size)
    trials = args.trials if args.trials is not None else config.robustness_trials
    seed = args.seed if args.seed is not None else config.robustness_seed

    def progress(trial):
        if (trial + 1) % 100 == 0:
            print(f"  trial {trial + 1}/{trials}")

    report = experiments.robustness_study(problem, U, trials, seed, rays=args.rays,
                                          progress=progress)
    paths = experiments.write_robustness(report, config.out)
    for crit in ("A", "D", "E"):
        print(
            f"phi_{crit}: nominal {report.nominal[crit]:.6f}  mean {report.mean[crit]:.6f}  "
            f"variance {report.variance[crit]:.3e}  worst {report.worst[crit]:.6f}"
        )
    if report.n_failed:
        print(f"{report.n_failed}/{trials} trials failed (see {paths['json']})")
    print(f"wrote {paths['csv']}")
    return 0


def _cmd_plot_data(args) -> int:
    config = _resolve_config(args)
    U = _design_from_args(args)
    problem = config.problem("A", N=U.size)
    out_dir = f"{config.out}/plots"
    paths = experiments.export_region_plots(problem, U, out_dir)
    print(f"wrote {len(paths)} files under {out_dir}")
    return 0


def _cmd_quantile(args) -> int:
    if args.dist == "chi2":
        if args.dof is None:
            raise ConfigError("chi2 needs --dof")
        print(repr(chi2_quantile(args.alpha, args.dof)))
    else:
        if args.dof1 is None or args.dof2 is None:
            raise ConfigError("f needs --dof1 and --dof2")
        print(repr(f_quantile(args.alpha, args.dof1, args.dof2)))
    return 0


def _add_config_flags(parser, with_model=True):
    parser.add_argument("--config", help="JSON run file")
    if with_model:
        parser.add_argument("--model", help="built-in model id (bod, second-order, poly2)")
    parser.add_argument("--alpha", type=float, help="confidence level")
    parser.add_argument("--epsilon", type=float, help="grid pitch for phi_D")
    parser.add_argument("--seed", type=int, help="random seed")
    parser.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="exactoed",
        description="Optimal experiment design against exact nonlinear confidence regions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_design = sub.add_parser("design", help="solve one design row")
    _add_config_flags(p_design)
    p_design.add_argument("--criterion", required=True, choices=["a", "d", "e", "A", "D", "E"])
    p_design.add_argument("--method", required=True,
                          choices=["classical", "exact", "ellipsoidal", "kkt"])
    p_design.add_argument("--n", required=True, type=int, help="number of samples")
    p_design.add_argument("--initial-design", help="comma-separated starting design")
    p_design.set_defaults(func=_cmd_design)

    p_table = sub.add_parser("table", help="solve every row of a run config")
    _add_config_flags(p_table)
    p_table.set_defaults(func=_cmd_table)

    p_rob = sub.add_parser("robustness", help="Monte Carlo noise study at a fixed design")
    _add_config_flags(p_rob)
    p_rob.add_argument("--u", help="comma-separated design, e.g. 1.37,1.37,20,20")
    p_rob.add_argument("--design", help="design_*.json produced by design/table")
    p_rob.add_argument("--trials", type=int, help="number of noise trials")
    p_rob.add_argument("--rays", type=int, default=256, help="ray count of the fast evaluators")
    p_rob.set_defaults(func=_cmd_robustness)

    p_plot = sub.add_parser("plot-data", help="export region geometry as CSV polylines")
    _add_config_flags(p_plot)
    p_plot.add_argument("--u", help="comma-separated design")
    p_plot.add_argument("--design", help="design_*.json produced by design/table")
    p_plot.set_defaults(func=_cmd_plot_data)

    p_q = sub.add_parser("quantile", help="print a chi2 or F quantile")
    p_q.add_argument("--dist", required=True, choices=["chi2", "f"])
    p_q.add_argument("--alpha", required=True, type=float)
    p_q.add_argument("--dof", type=int)
    p_q.add_argument("--dof1", type=int)
    p_q.add_argument("--dof2", type=int)
    p_q.set_defaults(func=_cmd_quantile)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except VerificationFailure as err:
        print(f"verification failure: {err}", file=sys.stderr)
        return 4
    except SolverFailure as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
