"""Command-line entry point.

    hiercontrol <subcommand> --config cfg.json [--out DIR] [--seed N] ...

Subcommands: validate-geometry, weights, simulate, nash, null-control,
trajectory, observability, equilibrium-scan.  CSV files carry field and
series data, JSON files summaries and the run manifest; figures render as
PNG unless --no-plot.  Exit codes: 0 success, 2 validation failure,
3 solver divergence (diagnostics written either way).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, report
from .analysis import (DegenerateSample, equilibrium_second_derivative,
                       observability_sample, weighted_estimate_report)
from .coefficients import CoefficientError
from .config import ConfigError, Problem, load_problem_file
from .eta import ConstructionFailed, construct_eta
from .fields import Field, field_from_csv, field_to_csv
from .geometry import GeometryError, validate_geometry
from .grid import GridError
from .leader import (CGStalled, FormNotCoercive, OuterDiverged,
                     TrajectoryConditionViolated, null_control_nonlinear_picard,
                     null_control_penalized, null_control_trajectory,
                     null_control_weighted_ls)
from .manifest import PhaseTimer, write_manifest
from .nash import FixedPointDiverged, solve_nash_fixed_point
from .operators import LinearizedOperator, SingularStep
from .oracles import SingularMatrix
from .residuals import apply_optimality_residual
from .semilinear import StepDivergence, solve_forward_semilinear
from .weights import WeightInequalityViolated, build_weights, weight_report

VALIDATION_ERRORS = (ConfigError, GridError, GeometryError, CoefficientError,
                     ConstructionFailed, WeightInequalityViolated,
                     TrajectoryConditionViolated)
DIVERGENCE_ERRORS = (FixedPointDiverged, OuterDiverged, CGStalled, FormNotCoercive,
                     StepDivergence, SingularStep, SingularMatrix, DegenerateSample)


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _write_json(path: Path, doc: dict):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _write_rows(path: Path, header: list[str], rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def _build_weights(problem: Problem):
    sv = problem.solver
    etas = construct_eta(problem.geom, problem.grid)
    w = build_weights(etas, problem.grid, s=sv["s"], lam=sv["lambda"],
                      case_tag=problem.geom.case_tag, c_s=sv["c_s"])
    tw = w.tempered(cap=sv["weight_cap"], ref_fraction=sv["weight_ref_fraction"])
    return w, tw


def _leader_field(problem: Problem, spec: str) -> Field:
    g = problem.grid
    if spec == "zero":
        return Field.zeros(g, "slab")
    if spec == "bump":
        f = Field.zeros(g, "slab")
        mask = problem.geom.leader_domain.mask(g)
        tm = g.t_mid
        f.values[1:] = (np.sin(np.pi * tm / g.T)[:, None]
                        * mask[None, :])
        return f
    return field_from_csv(g, spec, kind="slab")


def _nash_summary(sol):
    return {
        "iterations": sol.iterations,
        "residual": sol.residual,
        "j_values": list(sol.j_values),
    }


def _result_summary(res, problem: Problem):
    doc = {
        "method_tag": res.method_tag,
        "terminal_norm": res.terminal_norm,
        "initial_norm": float(np.sqrt(problem.grid.dx * np.sum(problem.y0[1:-1] ** 2))),
        "iterations": res.iterations,
        "weighted_norms": res.weighted_norms,
        "nash": _nash_summary(res.nash),
    }
    if res.epsilon is not None:
        doc["epsilon"] = res.epsilon
    if res.recovered_terminal_norm is not None:
        doc["recovered_terminal_norm"] = res.recovered_terminal_norm
    for key in ("smallness_gate_value", "smallness_gate_limit", "smallness_gate_ok",
                "trajectory_gradient_sup", "trajectory_gradient_bound",
                "linear_solver"):
        if key in res.diagnostics:
            doc[key] = res.diagnostics[key]
    if "cg" in res.diagnostics:
        doc["wls_cg"] = res.diagnostics["cg"]
    return doc


def _dump_result_fields(res, out: Path, plot: bool):
    field_to_csv(res.f, out / "f.csv", "f")
    field_to_csv(res.nash.y, out / "y.csv", "y")
    field_to_csv(res.nash.v1, out / "v1.csv", "v1")
    field_to_csv(res.nash.v2, out / "v2.csv", "v2")
    field_to_csv(res.nash.p1, out / "p1.csv", "p1")
    field_to_csv(res.nash.p2, out / "p2.csv", "p2")
    if plot:
        report.field_heatmap(res.f, out / "f.png", "leader control")
        report.field_heatmap(res.nash.y, out / "y.png", "controlled state")
        report.field_heatmap(res.nash.v1, out / "v1.png", "follower control 1")
        report.field_heatmap(res.nash.v2, out / "v2.png", "follower control 2")


# -- subcommand implementations ---------------------------------------------

def cmd_validate_geometry(problem: Problem, args, out: Path, plot: bool, timer):
    with timer.phase("validate"):
        rep = validate_geometry(problem.geom, problem.grid)
    _write_rows(out / "geometry_report.csv", ["condition", "result", "detail"], rep.rows())
    _write_json(out / "geometry.json", {
        "case_tag": rep.case_tag, "ok": rep.ok, "measures": rep.measures,
    })
    if plot:
        report.geometry_diagram(problem.geom, problem.grid, out / "geometry.png")
    if not rep.ok:
        raise GeometryError("; ".join(f"{c.name}: {c.detail}" for c in rep.checks
                                      if not c.passed))
    return 0


def cmd_weights(problem: Problem, args, out: Path, plot: bool, timer):
    with timer.phase("weights"):
        w, tw = _build_weights(problem)
        diag = weight_report(w)
    g = problem.grid
    rows = []
    logs = {k: w.log_rho(k) for k in ("rho", "rho0", "rho1", "rho2", "rho3",
                                      "rho4", "rho5")}
    sb = w.sigma_bar_i[w.selected_index]
    xb = w.xi_bar_i[w.selected_index]
    bstar = w.beta_bar_star
    for k, t in enumerate(g.t_mid):
        for j, x in enumerate(g.x):
            rows.append((x, t, sb[k, j], xb[k, j], bstar[k],
                         logs["rho"][k], logs["rho0"][k], logs["rho1"][k],
                         logs["rho2"][k], logs["rho3"][k], logs["rho4"][k],
                         logs["rho5"][k]))
    _write_rows(out / "weights.csv",
                ["x", "t", "sigma", "xi", "beta_star", "log_rho", "log_rho0",
                 "log_rho1", "log_rho2", "log_rho3", "log_rho4", "log_rho5"], rows)
    _write_json(out / "weight_report.json", {
        "s": diag.s, "lambda": diag.lam,
        "ratio_bar_over_hat": list(diag.ratio_bar_over_hat),
        "ratio_bar_over_star": list(diag.ratio_bar_over_star),
        "chain_constants": diag.chain_constants,
        "violations": diag.violations,
        "tempering": {"kappa": tw.kappa, "cap": tw.cap},
    })
    if plot:
        report.weight_profiles(w, out / "weights.png")
    if diag.violations:
        raise WeightInequalityViolated("; ".join(diag.violations))
    return 0


def cmd_simulate(problem: Problem, args, out: Path, plot: bool, timer):
    g = problem.grid
    f = _leader_field(problem, args.leader)
    src = Field.zeros(g, "slab")
    src.values[1:] = f.values[1:] * problem.geom.leader_domain.mask(g)[None, :]
    with timer.phase("simulate"):
        y = solve_forward_semilinear(problem.model, g, problem.y0, src,
                                     tol=problem.solver["step_tol"])
    field_to_csv(y, out / "y.csv", "y")
    _write_json(out / "summary.json", {
        "terminal_norm": y.space_norm(g.Nt),
        "initial_norm": y.space_norm(0),
        "sup_norm": y.sup_norm(),
    })
    if plot:
        report.field_heatmap(y, out / "y.png", "state")
    return 0


def cmd_nash(problem: Problem, args, out: Path, plot: bool, timer):
    g = problem.grid
    sv = problem.solver
    f = _leader_field(problem, args.leader)
    with timer.phase("nash"):
        sol = solve_nash_fixed_point(
            problem.model, g, problem.geom, problem.objectives, f,
            sv["nash_mode"], y0=problem.y0, tol=sv["nash_tol"],
            max_sweeps=sv["nash_max_sweeps"], theta=sv["nash_theta"],
            scheme=sv["convection_scheme"], step_tol=sv["step_tol"])
    for name, fld in (("y", sol.y), ("p1", sol.p1), ("p2", sol.p2),
                      ("v1", sol.v1), ("v2", sol.v2)):
        field_to_csv(fld, out / f"{name}.csv", name)
    _write_rows(out / "convergence.csv", ["iteration", "residual"],
                list(enumerate(sol.history, start=1)))
    if sv["nash_mode"] == "linear":
        lin_op = LinearizedOperator.at_zero_state(problem.model, g,
                                                  sv["convection_scheme"])
    else:
        lin_op = None
    resid = apply_optimality_residual(
        problem.model, g, (sol.y, sol.p1, sol.p2, f), problem.objectives,
        problem.geom, linearized=lin_op, scheme=sv["convection_scheme"])
    _write_json(out / "summary.json", {
        **_nash_summary(sol),
        "optimality_residual_sup": resid.max_norm(),
    })
    if plot:
        report.convergence_curve(sol.history, out / "convergence.png",
                                 "follower fixed point")
        report.field_heatmap(sol.y, out / "y.png", "state")
        report.field_heatmap(sol.v1, out / "v1.png", "follower control 1")
        report.field_heatmap(sol.v2, out / "v2.png", "follower control 2")
    return 0


def cmd_null_control(problem: Problem, args, out: Path, plot: bool, timer):
    g = problem.grid
    sv = problem.solver
    w, tw = _build_weights(problem)
    with timer.phase("null_control"):
        if args.method == "hum":
            res = null_control_penalized(
                problem.model, g, problem.geom, problem.objectives, problem.y0, tw,
                eps_schedule=tuple(sv["eps_schedule"]),
                control_weight_cap=sv["hum_weight_cap"],
                cg_tol=sv["hum_cg_tol"], cg_max_iter=sv["hum_cg_max_iter"],
                nash_tol=sv["nash_tol"], scheme=sv["convection_scheme"])
        elif args.method == "wls":
            res = null_control_weighted_ls(
                problem.model, g, problem.geom, problem.objectives, problem.y0, tw,
                cg_tol=sv["wls_cg_tol"], cg_max_iter=sv["wls_cg_max_iter"],
                linear_solver=sv["wls_linear_solver"],
                scheme=sv["convection_scheme"], nash_tol=sv["nash_tol"])
        else:
            res = null_control_nonlinear_picard(
                problem.model, g, problem.geom, problem.objectives, problem.y0, tw,
                max_outer=sv["picard_max_outer"], outer_tol=sv["picard_tol"],
                damping=sv["picard_damping"], smallness_gate=sv["smallness_gate"],
                scheme=sv["convection_scheme"],
                wls_opts={"cg_tol": sv["wls_cg_tol"],
                          "cg_max_iter": sv["wls_cg_max_iter"],
                          "linear_solver": sv["wls_linear_solver"]})
    _dump_result_fields(res, out, plot)
    if res.eps_table:
        _write_rows(out / "eps_table.csv",
                    ["eps", "terminal_norm", "cg_iterations", "grad_norm"],
                    [(r["eps"], r["terminal_norm"], r["cg_iterations"], r["grad_norm"])
                     for r in res.eps_table])
        if plot:
            report.eps_curve(res.eps_table, out / "eps_table.png")
    estim = weighted_estimate_report(res, tw, problem.geom, problem.objectives,
                                     problem.y0)
    doc = _result_summary(res, problem)
    doc["weighted_estimates"] = {
        "lhs_first": estim.lhs_first, "lhs_second": estim.lhs_second,
        "rhs": estim.rhs, "ratio_first": estim.ratio_first,
        "ratio_second": estim.ratio_second,
    }
    _write_json(out / "summary.json", doc)
    return 0


def cmd_trajectory(problem: Problem, args, out: Path, plot: bool, timer):
    g = problem.grid
    sv = problem.solver
    w, tw = _build_weights(problem)
    if args.ybar == "zero":
        ybar = Field.zeros(g, "node")
    else:
        ybar = field_from_csv(g, args.ybar, kind="node")
    with timer.phase("trajectory"):
        res = null_control_trajectory(
            problem.model, g, problem.geom, problem.objectives, problem.y0,
            ybar, tw,
            max_outer=sv["picard_max_outer"], outer_tol=sv["picard_tol"],
            damping=sv["picard_damping"], smallness_gate=sv["smallness_gate"],
            scheme=sv["convection_scheme"],
            wls_opts={"cg_tol": sv["wls_cg_tol"],
                      "cg_max_iter": sv["wls_cg_max_iter"],
                      "linear_solver": sv["wls_linear_solver"]})
    _dump_result_fields(res, out, plot)
    _write_json(out / "summary.json", _result_summary(res, problem))
    return 0


def cmd_observability(problem: Problem, args, out: Path, plot: bool, timer):
    g = problem.grid
    sv = problem.solver
    w, tw = _build_weights(problem)
    with timer.phase("observability"):
        rep = observability_sample(problem.model, g, problem.geom,
                                   problem.objectives, w, tw,
                                   n_samples=args.samples, seed=args.seed,
                                   scheme=sv["convection_scheme"])
    _write_rows(out / "samples.csv", ["sample", "lhs", "rhs", "ratio", "h_term"],
                [(k, rep.lhs[k], rep.rhs[k], rep.ratios[k], rep.h_term[k])
                 for k in range(len(rep.ratios))])
    _write_json(out / "summary.json", {
        "n_samples": rep.n_samples, "max_ratio": rep.max_ratio,
        "degenerate_resamples": rep.degenerate_resamples,
        "s": rep.s, "lambda": rep.lam, "kappa": rep.kappa, "seed": rep.seed,
    })
    if plot:
        report.ratio_histogram(rep.ratios, out / "ratios.png",
                               "observability ratio distribution")
    return 0


def cmd_equilibrium_scan(problem: Problem, args, out: Path, plot: bool, timer):
    g = problem.grid
    sv = problem.solver
    mu_grid = [float(v) for v in args.mu_grid.split(",")]
    f = _leader_field(problem, args.leader)
    mode = sv["nash_mode"] if sv["nash_mode"] in ("linear", "nonlinear") else "linear"
    with timer.phase("equilibrium_scan"):
        rep = equilibrium_second_derivative(
            problem.model, g, problem.geom, problem.objectives, f, mu_grid,
            n_directions=args.directions, seed=args.seed, mode=mode,
            nash_opts={"y0": problem.y0, "tol": sv["nash_tol"],
                       "scheme": sv["convection_scheme"],
                       "step_tol": sv["step_tol"]})
    _write_rows(out / "scan.csv", ["mu", "min_form", "oracle_gap"],
                list(zip(rep.mu_grid, rep.min_form, rep.oracle_gap)))
    _write_json(out / "summary.json", {
        "mu_grid": rep.mu_grid, "min_form": rep.min_form,
        "oracle_gap": rep.oracle_gap, "mu_star": rep.mu_star,
    })
    if plot:
        report.mu_scan_curve(rep.mu_grid, rep.min_form, out / "scan.png")
    return 0


COMMANDS = {
    "validate-geometry": cmd_validate_geometry,
    "weights": cmd_weights,
    "simulate": cmd_simulate,
    "nash": cmd_nash,
    "null-control": cmd_null_control,
    "trajectory": cmd_trajectory,
    "observability": cmd_observability,
    "equilibrium-scan": cmd_equilibrium_scan,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hiercontrol", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="subcommand", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True)
        sp.add_argument("--out", default="out")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--no-plot", action="store_true")
        if name == "null-control":
            sp.add_argument("--method", choices=("hum", "wls", "picard"),
                            default="wls")
        if name == "trajectory":
            sp.add_argument("--ybar", default="zero")
        if name in ("simulate", "nash", "equilibrium-scan"):
            sp.add_argument("--leader", default="zero")
        if name == "observability":
            sp.add_argument("--samples", type=int, default=100)
        if name == "equilibrium-scan":
            sp.add_argument("--mu-grid", default="10,30,100,300,1000")
            sp.add_argument("--directions", type=int, default=20)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    timer = PhaseTimer()
    try:
        with timer.phase("load"):
            problem = load_problem_file(args.config)
            problem.solver["seed"] = args.seed
        code = COMMANDS[args.subcommand](problem, args, out, not args.no_plot, timer)
    except VALIDATION_ERRORS as exc:
        _write_json(out / "error.json", {"error": type(exc).__name__,
                                         "message": str(exc), "exit_code": 2})
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except DIVERGENCE_ERRORS as exc:
        doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": 3}
        history = getattr(exc, "history", None)
        if history:
            doc["history"] = list(history)
            _write_rows(out / "iterates.csv", ["iteration", "residual"],
                        list(enumerate(history, start=1)))
        _write_json(out / "error.json", doc)
        print(f"solver divergence: {exc}", file=sys.stderr)
        return 3
    write_manifest(out, args.subcommand, problem.config, args.seed,
                   {"L": problem.grid.L, "T": problem.grid.T,
                    "Nx": problem.grid.Nx, "Nt": problem.grid.Nt,
                    "case": problem.geom.case_tag},
                   timer.timings)
    return code


if __name__ == "__main__":
    sys.exit(main())
