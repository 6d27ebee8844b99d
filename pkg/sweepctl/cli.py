"""
Command-line front end.

    python -m sweepctl simulate    --config run.yaml [--out DIR]
    python -m sweepctl approximate --config run.yaml [--out DIR]
    python -m sweepctl solve       --config run.yaml [--out DIR]
    python -m sweepctl check       --config run.yaml --primal trajectory.csv [--duals duals.yaml]
                                   [--coderivative] [--selection analysis|exact]
    python -m sweepctl crowd       [--config run.yaml] [--tau T] [--x1 X] [--x2 X] [--xd X]
                                   [--L1 L] [--L2 L] [--k K]
    python -m sweepctl table1      [--out DIR]

Exit codes: 0 success, 1 a check failed, 2 usage or configuration error.
"""

import argparse
import json
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import yaml

from . import crowd
from .approximation import ReferenceSolution, construct_approximant, verify_uk_variation
from .catalogue import (
    constraint_set_from_problem,
    control_set_a_from_spec,
    control_set_u_from_spec,
    endpoint_from_spec,
    perturbation_from_spec,
    running_cost_from_spec,
    terminal_cost_from_spec,
)
from .coderivatives import coderivative_domain_check, coderivative_normal_cone
from .config import Config, load_config
from .dynamics import ControlSignal, PerturbationMap, catching_up_simulate, verify_feasibility
from .exceptions import ConfigError, PreconditionError, SweepError
from .export import (
    RESIDUAL_COLUMNS,
    SOLVER_COLUMNS,
    SUMMARY_COLUMNS,
    TABLE_COLUMNS,
    RunManifest,
    file_sha256,
    read_trajectory,
    write_rows,
    write_trajectory,
)
from .geometry import ConstraintSet
from .ocp import DiscreteDecision, Localization, SweepingOCP
from .optimality import DualVariables, evaluate_residuals, recover_duals
from .schemas import CrowdBlock, RunConfig
from .shooting import ShootingOptions, solve_shooting
from .workers import map_bounded

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


class UsageError(SweepError):
    pass


@dataclass
class _Model:
    """Continuous data of a run: from the problem block or the corridor."""
    cset: ConstraintSet
    f: PerturbationMap
    ctrl: ControlSignal
    x0: np.ndarray
    ocp: SweepingOCP
    corridor: "crowd.CorridorConfig | None" = None


# ─────────────────────────────────────────────────────────────
# Problem assembly
# ─────────────────────────────────────────────────────────────

def _corridor_from(cfg: RunConfig | None) -> crowd.CorridorConfig:
    block = cfg.crowd if cfg is not None and cfg.crowd is not None else CrowdBlock()
    return crowd.CorridorConfig.from_block(block)


def _simulated_reference(problem, cset, f, ctrl, x0, sign) -> ReferenceSolution:
    spec = problem.reference
    fine = catching_up_simulate(cset, f, ctrl, x0, spec.k_fine, sign)
    return ReferenceSolution.from_trajectory(fine, mu=spec.mu)


def _build_model(cfg: RunConfig, k: int) -> _Model:
    run = cfg.run
    problem = cfg.problem
    if problem is None:
        if cfg.crowd is None:
            raise ConfigError("config needs a problem or a crowd block")
        corridor = crowd.CorridorConfig.from_block(cfg.crowd)
        ocp, init = crowd.build_ocp(corridor, k)
        sol = crowd.closed_form_solve(corridor)
        ctrl = ControlSignal.constant(np.zeros(2), sol.controls, init.T, cells=k)
        return _Model(ocp.geometry, ocp.dynamics, ctrl, ocp.x0, ocp, corridor)

    n = problem.dimension
    cset = constraint_set_from_problem(problem, run.active_tol)
    d = problem.controls_a.dimension
    f = perturbation_from_spec(problem.perturbation, n, d)
    u_value = np.zeros(n) if problem.controls_u.value is None else problem.controls_u.value
    a_value = np.zeros(d) if problem.controls_a.value is None else problem.controls_a.value
    ctrl = ControlSignal.constant(u_value, a_value, problem.horizon, cells=k)
    x0 = np.asarray(problem.x0, float)

    localization = None
    if problem.localized:
        if problem.reference is None:
            raise ConfigError("a localized problem needs a reference block", "problem.reference")
        ref = _simulated_reference(problem, cset, f, ctrl, x0, run.sign)
        localization = Localization(reference=ref, epsilon=problem.epsilon)
    ocp = SweepingOCP(
        geometry=cset,
        dynamics=f,
        controls_a=control_set_a_from_spec(problem.controls_a),
        terminal_cost=terminal_cost_from_spec(problem.terminal_cost, n),
        running_cost=running_cost_from_spec(problem.running_cost, n, d),
        x0=x0,
        k=k,
        controls_u=control_set_u_from_spec(problem.controls_u, n),
        u0=np.asarray(u_value, float),
        endpoint_x=endpoint_from_spec(problem.endpoint_x),
        endpoint_T=endpoint_from_spec(problem.endpoint_T),
        localization=localization,
        horizon=problem.horizon,
        epsilon=problem.epsilon,
        sign=run.sign,
    )
    return _Model(cset, f, ctrl, x0, ocp)


# ─────────────────────────────────────────────────────────────
# Subcommands
# ─────────────────────────────────────────────────────────────

def cmd_simulate(cfg: RunConfig, out: Path) -> int:
    k = cfg.run.k
    model = _build_model(cfg, k)
    traj = catching_up_simulate(model.cset, model.f, model.ctrl, model.x0, k, model.ocp.sign)
    write_trajectory(traj, out / "trajectory.csv")
    check = verify_feasibility(model.cset, None, traj)
    _progress(f"simulate: k={k} T={traj.horizon:.6g} min g={check.min_value:.3e}")
    return EXIT_OK if check.passed else EXIT_FAILED


def cmd_approximate(cfg: RunConfig, out: Path) -> int:
    problem = cfg.problem
    if problem is None or (problem.reference is not None and problem.reference.kind == "corridor"):
        corridor = _corridor_from(cfg)
        ref = crowd.reference_solution(corridor)
        sol = crowd.closed_form_solve(corridor)
        cset, f = crowd.corridor_geometry(corridor), crowd.corridor_dynamics(sol)
        controls_u = None
    else:
        if problem.reference is None:
            raise ConfigError("approximate needs a reference block", "problem.reference")
        model = _build_model(cfg, cfg.run.k)
        ref = _simulated_reference(problem, model.cset, model.f, model.ctrl, model.x0, cfg.run.sign)
        cset, f = model.cset, model.f
        controls_u = model.ocp.controls_u

    approximants = map_bounded(lambda k: construct_approximant(cset, f, ref, k, controls_u), cfg.run.k_values)
    rows, passed = [], True
    for approx in approximants:
        err, budget = approx.errors, approx.budget
        uk = verify_uk_variation(approx, budget)
        ok = err.sup_err <= budget.delta_k and err.extension_err <= budget.mu_x_k and uk.passed
        passed &= ok
        rows.append([
            approx.k, approx.h, budget.delta_k, budget.mu_x_k, budget.mu_a_k, err.sup_err,
            err.extension_err, err.l2_vel_err, err.l2_ctrl_err, err.endpoint_err, err.var_uk, uk.passed,
        ])
        _progress(f"approximate: k={approx.k} sup_err={err.sup_err:.3e} delta_k={budget.delta_k:.3e}")
    write_rows(out / "summary.csv", SUMMARY_COLUMNS, rows)
    return EXIT_OK if passed else EXIT_FAILED


def cmd_solve(cfg: RunConfig, out: Path) -> int:
    run = cfg.run
    model = _build_model(cfg, run.k)
    T0 = run.T_init or model.ctrl.horizon
    ctrl = model.ctrl.with_horizon(T0)
    traj = catching_up_simulate(model.cset, model.f, ctrl, model.x0, run.k, model.ocp.sign)
    init = DiscreteDecision.from_trajectory(traj)
    opts = ShootingOptions(
        control_blocks=run.control_blocks,
        optimize_u=cfg.problem.controls_u.optimize if cfg.problem else False,
        max_iters=run.max_iters,
    )
    result = solve_shooting(model.ocp, init, opts)
    write_rows(out / "solver.csv", SOLVER_COLUMNS, [[r.iter, r.cost, r.gnorm, r.T] for r in result.history])
    best = result.decision
    best_ctrl = ControlSignal.from_knots(best.u, best.a, best.T)
    write_trajectory(
        catching_up_simulate(model.cset, model.f, best_ctrl, model.x0, run.k, model.ocp.sign),
        out / "trajectory.csv",
    )
    _progress(f"solve: status={result.status} J={result.cost:.10g} T={best.T:.6g}")
    return EXIT_FAILED if result.status == "localization_violated" else EXIT_OK


def _load_duals(path: Path, k: int, n: int, m: int, d: int, s: int) -> DualVariables:
    if not path.is_file():
        raise ConfigError("duals file not found", str(path))
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot read duals: {e}", str(path)) from e
    unknown = set(raw) - {"lam", "alpha", "p_x", "p_u", "psi_u", "psi_a", "eta", "gamma"}
    if unknown:
        raise ConfigError(f"unknown dual keys {sorted(unknown)}", str(path))
    zeros = DualVariables.zeros(k, n, m, d, s)

    def field(name, shape):
        if name not in raw:
            return getattr(zeros, name)
        value = np.asarray(raw[name], dtype=float)
        if value.size == 1 and np.prod(shape) > 1:
            value = np.full(shape, float(value))
        if value.shape != shape:
            raise ConfigError(f"expected shape {shape}, got {value.shape}", f"{path}:{name}")
        return value

    try:
        return DualVariables(
            lam=float(raw.get("lam", 0.0)),
            alpha=field("alpha", (m,)),
            p_x=field("p_x", (k + 1, n)),
            p_u=field("p_u", (k + 1, n)),
            psi_u=field("psi_u", (k, s)),
            psi_a=field("psi_a", (k, d)),
            eta=field("eta", (k, m)),
            gamma=field("gamma", (k, m)),
        )
    except PreconditionError as e:
        raise ConfigError(str(e), str(path)) from e


def cmd_check(cfg: RunConfig, out: Path, args: argparse.Namespace) -> int:
    traj = read_trajectory(Path(args.primal))
    decision = DiscreteDecision.from_trajectory(traj)
    model = _build_model(cfg, decision.k)
    ocp = model.ocp
    tol = cfg.run.tolerance
    terminal = None
    if args.selection == "analysis" and model.corridor is not None:
        terminal = crowd.analysis_selection(model.corridor)

    if args.duals:
        uk = ocp.controls_u_k()
        duals = _load_duals(
            Path(args.duals), decision.k, decision.x.shape[1], ocp.geometry.m,
            decision.a.shape[1], uk.s if uk is not None else 0,
        )
        report = evaluate_residuals(ocp, decision, duals, tol=tol, terminal_selection=terminal)
    else:
        duals, report = recover_duals(ocp, decision, tol=tol, terminal_selection=terminal)

    write_rows(out / "residuals.csv", RESIDUAL_COLUMNS, report.rows())
    for name in report.failures:
        print(f"FAIL {name}: {report.residuals[name]:.3e} > {tol:.1e}", file=sys.stderr)
    passed = report.passed

    if args.coderivative:
        if cfg.point is None:
            raise ConfigError("--coderivative needs a point block", "point")
        passed &= _coderivative_report(model, cfg.point, out)

    _progress(f"check: max residual {report.max_residual:.3e} ({report.extras['multiplier']} multiplier)")
    return EXIT_OK if passed else EXIT_FAILED


def _coderivative_report(model: _Model, point, out: Path) -> bool:
    x, u, a, w, y = (np.asarray(v, float) for v in (point.x, point.u, point.a, point.w, point.y))
    in_domain = coderivative_domain_check(model.cset, model.f, x, u, a, w, y)
    estimate = coderivative_normal_cone(model.cset, x - u, w + model.f(x, a), y)
    payload = {
        "in_domain": in_domain,
        "ambiguous_multiplier": estimate.ambiguous,
        "candidates": [c.describe() for c in estimate.candidates],
    }
    (out / "coderivative.json").write_text(json.dumps(payload, indent=2) + "\n")
    return in_domain


def cmd_crowd(cfg: RunConfig | None, out: Path, args: argparse.Namespace) -> int:
    base = _corridor_from(cfg)
    overrides = {
        "tau": args.tau, "x1_init": args.x1, "x2_init": args.x2,
        "x_dest": args.xd, "L1": args.L1, "L2": args.L2,
    }
    try:
        corridor = replace(base, **{key: v for key, v in overrides.items() if v is not None})
    except PreconditionError as e:
        raise UsageError(str(e)) from e
    sol = crowd.closed_form_solve(corridor)
    for name in ("tau", "T_opt", "a1", "a2", "t_contact", "cost", "s1", "s2", "sb1", "sb2",
                 "s_after", "Lambda", "contact_regime", "trajectory_cost"):
        print(f"{name:>16}: {getattr(sol, name)}")
    if not sol.contact_regime:
        print("no contact before T_opt; closed form does not apply", file=sys.stderr)
        return EXIT_FAILED
    k = args.k or (cfg.run.k if cfg is not None else Config.DEFAULT_K)
    traj, _ = crowd.discrete_solution(corridor, k)
    write_trajectory(traj, out / "trajectory.csv")
    return EXIT_OK


def cmd_table1(out: Path) -> int:
    comparisons = crowd.compare_table(crowd.table_rows())
    rows = [[*c.computed, *c.raw[1:], c.matched] for c in comparisons]
    write_rows(out / "table1.csv", TABLE_COLUMNS, rows)
    for c in comparisons:
        status = "ok" if c.matched else "MISMATCH " + ", ".join(c.mismatches)
        print(f"tau={c.tau:g}: {status}")
    return EXIT_OK if all(c.matched for c in comparisons) else EXIT_FAILED


# ─────────────────────────────────────────────────────────────
# Entry point
# ─────────────────────────────────────────────────────────────

_QUIET = False


def _progress(message: str) -> None:
    if Config.SHOW_PROGRESS and not _QUIET:
        print(message, file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sweepctl", description="Controlled sweeping processes toolkit")
    parser.add_argument("--quiet", action="store_true", help="warnings only, no progress lines")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, needs_config: bool, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=needs_config, help="YAML run configuration")
        p.add_argument("--out", help="output directory (default: $SWEEP_OUTPUT_DIR/<command>)")
        p.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
        return p

    add("simulate", True, "catching-up simulation with constant controls")
    add("approximate", True, "discrete approximants and error budgets over k")
    add("solve", True, "single-shooting solve of the discrete problem")
    check = add("check", True, "necessary optimality residuals at a primal")
    check.add_argument("--primal", required=True, help="trajectory CSV")
    check.add_argument("--duals", help="YAML with lam, alpha, p_x, p_u, psi_u, psi_a, eta, gamma")
    check.add_argument("--coderivative", action="store_true", help="also report the coderivative at the point block")
    check.add_argument("--selection", choices=("analysis", "exact"), default="exact",
                       help="terminal subgradient selection")
    crowd_p = add("crowd", False, "closed-form corridor solution and its simulation")
    for flag, dest in (("--tau", "tau"), ("--x1", "x1"), ("--x2", "x2"), ("--xd", "xd"), ("--L1", "L1"), ("--L2", "L2")):
        crowd_p.add_argument(flag, dest=dest, type=float)
    crowd_p.add_argument("--k", type=int)
    add("table1", False, "stored reference table of the corridor model")
    return parser


def _setup_logging(quiet: bool) -> None:
    level = logging.WARNING if quiet else getattr(logging, Config.LOG_LEVEL.upper(), logging.INFO)
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def run_cli(argv: list[str] | None = None) -> int:
    global _QUIET
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    _QUIET = args.quiet
    _setup_logging(args.quiet)

    try:
        cfg = load_config(args.config) if args.config else None
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE

    out = Path(args.out) if args.out else Config.OUTPUT_DIR / args.command
    manifest = RunManifest(
        command=" ".join(["sweepctl", *(argv if argv is not None else sys.argv[1:])]),
        config_sha256=file_sha256(Path(args.config)) if args.config else None,
        effective_config=cfg.effective() if cfg is not None else None,
    )
    out.mkdir(parents=True, exist_ok=True)
    try:
        if args.command == "simulate":
            code = cmd_simulate(cfg, out)
        elif args.command == "approximate":
            code = cmd_approximate(cfg, out)
        elif args.command == "solve":
            code = cmd_solve(cfg, out)
        elif args.command == "check":
            code = cmd_check(cfg, out, args)
        elif args.command == "crowd":
            code = cmd_crowd(cfg, out, args)
        else:
            code = cmd_table1(out)
    except (ConfigError, UsageError) as e:
        print(f"error: {e}", file=sys.stderr)
        code = EXIT_USAGE
    except SweepError as e:
        logger.error("%s failed: %s", args.command, e)
        code = EXIT_FAILED
    manifest.write(out)
    return code
