"""Command-line front end: ``counterspec {solve,verify,navigate}``.

Exit codes: 0 success, 1 bad configuration, 2 solver non-convergence,
3 verification failure, 4 simulation failure.  ``COUNTERSPEC_LOG`` picks the
log level (``error``, ``info`` or ``debug``).
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import List, Optional

import numpy as np

from . import __version__, kernels
from .artifacts import column_block, metadata, read_table, write_summary, write_table
from .control import LqrWeights, reconstruct_lqr_weights, solve_lqr
from .errors import (
    CounterspecError,
    InvalidArgumentError,
    InsufficientGridError,
    NonConvergenceError,
    NumericalDivergenceError,
    OracleInconsistencyError,
    StencilError,
    TickError,
)
from .fixtures import FIXTURES, get_fixture
from .oracle import GridSpec, sensitivity_check, verify_compromise
from .problem import ConvexProgram, QuadraticFunction, SquaredNormCost
from .solver import SolverConfig, solve_counterfactual, solve_fixed_slack
from .terrain import SimConfig, Trajectory, discretize, match_lqr_completion, run_simulation

log = logging.getLogger("counterspec")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGENCE, EXIT_VERIFY, EXIT_SIMULATION = 0, 1, 2, 3, 4

TRAJECTORY_BASE = ["step", "p_x", "p_y", "v_x", "v_y", "u_x", "u_y", "gamma"]
SLACK_COLUMNS = ["s_x_0", "s_x_1", "s_x_2", "s_x_3", "s_u_0", "s_u_1"]
WEIGHT_COLUMNS = (["step", "t", "gamma", "x0_0", "x0_1", "x0_2", "x0_3"]
                  + column_block("q", 4) + column_block("r", 2) + ["u_x", "u_y"])


class ConfigError(Exception):
    """Configuration problem; ``field`` names the offending entry."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


# ---------------------------------------------------------------- config


@dataclass
class ExperimentConfig:
    raw: dict
    problem: Optional[ConvexProgram]
    problem_label: str
    mode: str
    slack: Optional[np.ndarray]
    solver: SolverConfig
    grid: Optional[object]
    tolerance: float
    fd_step: float
    sim: SimConfig
    tuned_q_scale: Optional[float]
    out_dir: str


def _section(raw, key):
    sec = raw.get(key, {})
    if not isinstance(sec, dict):
        raise ConfigError(key, "must be an object")
    return sec


def _number(sec, key, where, default, positive=False, integer=False):
    v = sec.get(key, default)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key}", f"expected a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(f"{where}.{key}", f"expected an integer, got {v!r}")
    if not math.isfinite(v) or (positive and v <= 0):
        raise ConfigError(f"{where}.{key}", f"expected a finite{' positive' if positive else ''} number, got {v!r}")
    return int(v) if integer else float(v)


def _vector(v, where, length=None):
    try:
        arr = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(where, "expected a list of numbers") from None
    if arr.ndim != 1 or (length is not None and arr.size != length) or not np.all(np.isfinite(arr)):
        raise ConfigError(where, f"expected {length or 'a list of'} finite numbers")
    return arr


def _inline_program(spec):
    def quad(d, where):
        if not isinstance(d, dict) or "q" not in d:
            raise ConfigError(where, "needs at least 'q' (and optionally 'P', 'r')")
        q = _vector(d["q"], f"{where}.q")
        P = np.asarray(d.get("P", np.zeros((q.size, q.size))), dtype=float)
        return QuadraticFunction(P, q, float(d.get("r", 0.0)))

    try:
        obj = quad(spec.get("objective"), "problem.quadratic.objective")
        cons = [quad(c, f"problem.quadratic.constraints[{k}]") for k, c in enumerate(spec.get("constraints", []))]
        return ConvexProgram(obj, cons, spec.get("group_map"))
    except CounterspecError as exc:
        raise ConfigError("problem.quadratic", str(exc)) from None


def _problem(raw, seed):
    sec = _section(raw, "problem")
    if "quadratic" in sec:
        return _inline_program(sec["quadratic"]), "inline"
    name = sec.get("fixture")
    if name is None:
        return None, None
    if name != "qp2d" and name not in FIXTURES:
        raise ConfigError("problem.fixture", f"unknown fixture {name!r}; choose from {sorted(FIXTURES) + ['qp2d']}")
    s = seed if seed is not None else sec.get("seed", 0)
    if isinstance(s, bool) or not isinstance(s, int) or s < 0:
        raise ConfigError("problem.seed", f"expected a nonnegative integer, got {s!r}")
    label = f"qp2d(seed={s})" if name == "qp2d" else name
    return get_fixture(name, s), label


def load_config(path, args) -> ExperimentConfig:
    """Parse and validate everything up front so that errors leave no files behind."""
    import json

    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}", f"invalid JSON ({exc.msg})") from None
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "top level must be an object")
    if raw.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"expected {SCHEMA_VERSION}, got {raw.get('schema_version')!r}")

    prog, label = _problem(raw, args.seed)

    mode = raw.get("mode", "counterfactual")
    if mode not in ("counterfactual", "fixed"):
        raise ConfigError("mode", f"expected 'counterfactual' or 'fixed', got {mode!r}")
    slack = None
    if mode == "fixed":
        if "slack" not in raw:
            raise ConfigError("slack", "required when mode is 'fixed'")
        slack = _vector(raw["slack"], "slack", prog.m_s if prog is not None else None)
        if np.any(slack < 0):
            raise ConfigError("slack", "entries must be nonnegative")

    sec = _section(raw, "solver")
    default = SolverConfig()
    solver = SolverConfig(
        eta=_number(sec, "eta", "solver", default.eta, positive=True),
        max_iterations=_number(sec, "max_iterations", "solver", default.max_iterations, positive=True, integer=True),
        tol=_number(sec, "tol", "solver", default.tol, positive=True),
        trace_stride=_number(sec, "trace_stride", "solver", default.trace_stride, positive=True, integer=True),
    )

    sec = _section(raw, "verify")
    grid = None
    if "references" in sec:
        refs = np.asarray(sec["references"], dtype=float)
        if refs.ndim != 2 or (prog is not None and refs.shape[1] != prog.m_s) or np.any(refs < 0):
            raise ConfigError("verify.references", "expected a list of nonnegative slack vectors")
        grid = refs
    elif "grid" in sec:
        g = sec["grid"]
        if not isinstance(g, dict):
            raise ConfigError("verify.grid", "must be an object with lower, upper, step")
        lower = _vector(g.get("lower"), "verify.grid.lower")
        upper = _vector(g.get("upper"), "verify.grid.upper", lower.size)
        step = _number(g, "step", "verify.grid", None, positive=True)
        if step is None or np.any(upper < lower) or np.any(lower < 0):
            raise ConfigError("verify.grid", "needs 0 <= lower <= upper and a positive step")
        grid = GridSpec(lower.tolist(), upper.tolist(), step)
    elif prog is not None and prog.m_s <= 2:
        grid = GridSpec([0.0] * prog.m_s, [4.0] * prog.m_s, 0.05 if prog.m_s == 1 else 0.25)
    tolerance = _number(sec, "tolerance", "verify", 1e-4, positive=True)
    fd_step = _number(sec, "fd_step", "verify", 1e-3, positive=True)

    sec = _section(raw, "simulation")
    d = SimConfig()
    x0 = _vector(sec.get("x0", list(d.x0)), "simulation.x0", 4)
    try:
        sim = SimConfig(
            ts=_number(sec, "ts", "simulation", d.ts, positive=True),
            horizon=_number(sec, "horizon", "simulation", d.horizon, positive=True, integer=True),
            threshold=_number(sec, "threshold", "simulation", d.threshold, positive=True),
            max_steps=_number(sec, "max_steps", "simulation", d.max_steps, positive=True, integer=True),
            x0=tuple(x0),
            lqr_q_scale=_number(sec, "lqr_q_scale", "simulation", d.lqr_q_scale, positive=True),
            lqr_r_scale=_number(sec, "lqr_r_scale", "simulation", d.lqr_r_scale, positive=True),
            epsilon=_number(sec, "epsilon", "simulation", d.epsilon, positive=True),
            solver=solver if "solver" in raw else d.solver,
            warm_start=bool(sec.get("warm_start", d.warm_start)),
        )
    except CounterspecError as exc:
        raise ConfigError("simulation", str(exc)) from None
    tuned = _number(sec, "tuned_q_scale", "simulation", 3.3, positive=True)

    out_dir = args.out or _section(raw, "output").get("dir")
    if not out_dir:
        raise ConfigError("output.dir", "no output directory (set output.dir or pass --out)")
    return ExperimentConfig(raw, prog, label, mode, slack, solver, grid, tolerance, fd_step, sim, tuned, out_dir)


def _require_problem(cfg: ExperimentConfig):
    if cfg.problem is None:
        raise ConfigError("problem", "this command needs problem.fixture or problem.quadratic")


def _prepare_out(cfg: ExperimentConfig):
    try:
        os.makedirs(cfg.out_dir, exist_ok=True)
    except OSError as exc:
        raise ConfigError("output.dir", f"cannot create {cfg.out_dir}: {exc.strerror}") from None
    if not os.access(cfg.out_dir, os.W_OK):
        raise ConfigError("output.dir", f"{cfg.out_dir} is not writable")


def _path(cfg, name):
    return os.path.join(cfg.out_dir, name)


# ---------------------------------------------------------------- solve


def _trace_rows(report, counterfactual):
    for e in report.trace:
        r = e.residual
        row = [e.iteration, *e.x, *e.lam, *e.s, r.stationarity, r.feasibility, r.complementarity]
        if counterfactual:
            row.append(r.counterfactual)
        yield row


def cmd_solve(cfg: ExperimentConfig, args) -> int:
    _require_problem(cfg)
    prog = cfg.problem
    counterfactual = cfg.mode == "counterfactual"
    _prepare_out(cfg)
    try:
        if counterfactual:
            report = solve_counterfactual(prog, SquaredNormCost(prog.m_s), cfg.solver)
        else:
            report = solve_fixed_slack(prog, cfg.slack, cfg.solver)
    except NumericalDivergenceError as exc:
        log.error("%s", exc)
        write_summary(_path(cfg, "summary.json"), {
            "command": "solve", "problem": cfg.problem_label, "converged": False, "error": str(exc),
            "metadata": metadata(cfg.raw),
        })
        return EXIT_NONCONVERGENCE
    header = (["iteration"] + column_block("x", prog.n) + column_block("lam", prog.m_c)
              + column_block("s", prog.m_s) + ["stationarity", "feasibility", "complementarity"])
    if counterfactual:
        header.append("counterfactual")
    write_table(_path(cfg, "trace.csv"), header, _trace_rows(report, counterfactual))
    summary = {
        "command": "solve",
        "problem": cfg.problem_label,
        "mode": cfg.mode,
        "converged": report.converged,
        "iterations": report.iterations,
        "x": report.x,
        "lam": report.lam,
        "s": report.s,
        "aggregated_duals": prog.aggregate(report.lam),
        "objective": prog.objective.value(report.x),
        "residual": report.residual.as_dict(),
        "metadata": metadata(cfg.raw, backend=report.backend),
    }
    write_summary(_path(cfg, "summary.json"), summary)
    log.info("solve: converged=%s after %d iterations", report.converged, report.iterations)
    return EXIT_OK if report.converged else EXIT_NONCONVERGENCE


# ---------------------------------------------------------------- verify


def cmd_verify(cfg: ExperimentConfig, args) -> int:
    _require_problem(cfg)
    prog = cfg.problem
    if cfg.grid is None:
        raise ConfigError("verify.grid", f"required for programs with {prog.m_s} slacks")
    _prepare_out(cfg)
    cost = SquaredNormCost(prog.m_s)
    report = solve_counterfactual(prog, cost, cfg.solver)
    if not report.converged:
        log.error("counterfactual solve did not converge (residual %.3g)", report.residual.max())
        return EXIT_NONCONVERGENCE
    s_check = report.s + (args.perturb_slack or 0.0)
    try:
        cert = verify_compromise(prog, cost, s_check, cfg.grid, tolerance=cfg.tolerance)
        sens = sensitivity_check(prog, s_check, fd_step=cfg.fd_step)
    except (OracleInconsistencyError, InsufficientGridError, StencilError) as exc:
        log.error("verification could not be completed: %s", exc)
        write_summary(_path(cfg, "certificate.json"), {
            "command": "verify", "problem": cfg.problem_label, "passed": False, "error": str(exc),
            "metadata": metadata(cfg.raw),
        })
        return EXIT_VERIFY
    rows = [[j, s_check[j], sens.lam_oracle[j], sens.lam_solver[j], abs(sens.lam_oracle[j] - sens.lam_solver[j])]
            for j in range(prog.m_s)]
    write_table(_path(cfg, "sensitivity.csv"), ["slack_index", "s", "lam_oracle", "lam_solver", "abs_error"], rows)
    # the sensitivity identity is only meaningful at the solver's own s
    sens_ok = sens.max_error <= 1e-2 or bool(args.perturb_slack)
    summary = {
        "command": "verify",
        "problem": cfg.problem_label,
        "perturb_slack": args.perturb_slack or 0.0,
        "solver_s": report.s,
        "solver_lam": report.lam,
        "compromise": cert.as_dict(),
        "sensitivity": {"lam_oracle": sens.lam_oracle, "lam_solver": sens.lam_solver,
                        "max_error": sens.max_error, "tolerance": 1e-2, "passed": sens.max_error <= 1e-2},
        "passed": cert.passed and sens_ok,
        "metadata": metadata(cfg.raw, backend=report.backend),
    }
    write_summary(_path(cfg, "certificate.json"), summary)
    log.info("verify: worst violation %.3g, sensitivity error %.3g", cert.worst_violation, sens.max_error)
    return EXIT_OK if summary["passed"] else EXIT_VERIFY


# ---------------------------------------------------------------- navigate


def _trajectory_rows(tr: Trajectory, with_slacks: bool):
    for r in tr.records:
        row = [r.step, *r.state, *r.input, r.gamma]
        if with_slacks:
            row.extend([*r.s_x, *r.s_u])
        yield row


def _weight_rows(tr: Trajectory, sim: SimConfig):
    for r in tr.records:
        w = reconstruct_lqr_weights(r.plan)
        for t in range(sim.horizon):
            yield [r.step, t + 1, r.gamma, *r.state, *w.Q[t], *w.R[t], *r.plan.inputs[t]]


def replay_weights(path, ts: float = 0.5) -> float:
    """Replay a weight table through LQR; returns the worst input mismatch."""
    tab = read_table(path)
    steps = tab["step"].astype(int)
    worst = 0.0
    for step in np.unique(steps):
        rows = np.flatnonzero(steps == step)
        rows = rows[np.argsort(tab["t"][rows])]
        gamma = tab["gamma"][rows[0]]
        x0 = np.array([tab[f"x0_{k}"][rows[0]] for k in range(4)])
        Q = np.column_stack([tab[f"q_{k}"][rows] for k in range(4)])
        R = np.column_stack([tab[f"r_{k}"][rows] for k in range(2)])
        planned = np.column_stack([tab["u_x"][rows], tab["u_y"][rows]])
        sol = solve_lqr(discretize(gamma, ts), x0, len(rows), LqrWeights(Q, R))
        worst = max(worst, float(np.max(np.abs(sol.inputs - planned))))
    return worst


def _summarize(tr: Trajectory) -> dict:
    ticks = tr.tick_seconds
    return {
        "steps_to_threshold": tr.steps_to_threshold,
        "converged": tr.converged,
        "energy": tr.energy,
        "final_state": tr.final_state,
        "final_norm": float(np.linalg.norm(tr.final_state)),
    }, {
        "mean_tick_seconds": float(np.mean(ticks)) if ticks else 0.0,
        "max_tick_seconds": float(np.max(ticks)) if ticks else 0.0,
    }


def cmd_navigate(cfg: ExperimentConfig, args) -> int:
    which = args.controller
    runs = {}
    if which in ("cf", "both"):
        runs["cf"] = replace(cfg.sim, controller="cf")
    if which in ("lqr", "both"):
        runs["lqr"] = replace(cfg.sim, controller="lqr")
    if which == "both" and cfg.tuned_q_scale is not None:
        runs["lqr_tuned"] = replace(cfg.sim, controller="lqr", lqr_q_scale=cfg.tuned_q_scale)
    _prepare_out(cfg)

    results, failure = {}, None
    with ThreadPoolExecutor(max_workers=len(runs)) as pool:
        futures = {name: pool.submit(run_simulation, sim) for name, sim in runs.items()}
        for name, fut in futures.items():
            try:
                results[name] = fut.result()
            except TickError as exc:
                failure = (name, exc)

    if failure is not None:
        name, exc = failure
        log.error("%s controller failed at step %s: %s", name, exc.step, exc)
        write_summary(_path(cfg, "summary.json"), {
            "command": "navigate", "error": str(exc), "controller": name, "failed_step": exc.step,
            "metadata": metadata(cfg.raw),
        })
        return EXIT_SIMULATION

    summary = {"command": "navigate", "x0": cfg.sim.x0, "controllers": {}}
    timing = {}
    for name, tr in results.items():
        with_slacks = runs[name].controller == "cf"
        header = TRAJECTORY_BASE + (SLACK_COLUMNS if with_slacks else [])
        write_table(_path(cfg, f"trajectory_{name}.csv"), header, _trajectory_rows(tr, with_slacks))
        entry, timing[name] = _summarize(tr)
        if name != "cf":
            entry["q_scale"] = runs[name].lqr_q_scale
            entry["r_scale"] = runs[name].lqr_r_scale
        summary["controllers"][name] = entry

    cf = results.get("cf")
    if cf is not None and args.emit_weights:
        wpath = _path(cfg, "weights_cf.csv")
        write_table(wpath, WEIGHT_COLUMNS, _weight_rows(cf, cfg.sim))
        summary["weights_replay_max_error"] = replay_weights(wpath, cfg.sim.ts)

    if cf is not None and "lqr" in results:
        lqr = results["lqr"]
        comparison = {}
        if cf.converged and lqr.converged:
            comparison["step_ratio_cf_over_lqr"] = cf.steps_to_threshold / lqr.steps_to_threshold
        tuned = results.get("lqr_tuned")
        if tuned is not None and cf.energy > 0:
            comparison["energy_ratio_tuned_over_cf"] = tuned.energy / cf.energy
        if cf.converged:
            q, matched = match_lqr_completion(cfg.sim, cf.steps_to_threshold)
            if matched is not None:
                comparison["matched_completion"] = {
                    "q_scale": q,
                    "steps_to_threshold": matched.steps_to_threshold,
                    "energy": matched.energy,
                    "energy_ratio_over_cf": matched.energy / cf.energy if cf.energy > 0 else None,
                }
        summary["comparison"] = comparison

    summary["metadata"] = metadata(cfg.raw, backend=kernels.BACKEND, timing=timing)
    write_summary(_path(cfg, "summary.json"), summary)
    return EXIT_OK


# ---------------------------------------------------------------- entry


COMMANDS = {"solve": cmd_solve, "verify": cmd_verify, "navigate": cmd_navigate}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="counterspec", description="Counterfactual optimization experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_text in [("solve", "solve a program and write its iteration trace"),
                            ("verify", "certify a counterfactual solution against brute-force oracles"),
                            ("navigate", "run the terrain navigation experiment")]:
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=True, help="JSON experiment configuration")
        sp.add_argument("--out", help="output directory (overrides output.dir)")
        sp.add_argument("--seed", type=int, help="seed for the random qp2d fixture")
        if name == "verify":
            sp.add_argument("--perturb-slack", type=float, default=0.0,
                            help="shift the solver's slacks by this amount before certifying")
        if name == "navigate":
            sp.add_argument("--controller", choices=["cf", "lqr", "both"], default="both")
            sp.add_argument("--emit-weights", action="store_true",
                            help="write the equivalent LQR weight sequence of the counterfactual run")
    return p


def _configure_logging():
    level = os.environ.get("COUNTERSPEC_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s")
    if level not in levels:
        log.warning("unknown COUNTERSPEC_LOG=%r, using 'error'", level)


def main(argv: Optional[List[str]] = None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    if args.seed is not None and args.seed < 0:
        print("config error: --seed: must be nonnegative", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, args)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except InvalidArgumentError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
