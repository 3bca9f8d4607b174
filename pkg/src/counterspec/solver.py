"""Arrow-Hurwicz saddle point iterations.

``solve_counterfactual`` runs the modified iteration in which the slacks are
tied to the duals through ``s = (grad h)^{-1}(G^T lam)``, so the solver lands
directly on the compromise specification.  ``solve_fixed_slack`` is the
classical iteration with the slacks frozen.

Programs whose functions are all :class:`~counterspec.problem.QuadraticFunction`
(and whose spec cost is :class:`~counterspec.problem.SquaredNormCost`) run in
the compiled kernel; anything else takes the generic Python loop built from
:func:`primal_step` and :func:`dual_step_counterfactual`.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import kernels
from .errors import (
    InvalidArgumentError,
    NumericalDivergenceError,
    PreconditionError,
    SpecCostContractError,
)
from .problem import (
    ConvexProgram,
    KKTResidual,
    SaddleState,
    SpecCost,
    SquaredNormCost,
    kkt_residual,
)

log = logging.getLogger(__name__)

__all__ = [
    "SolverConfig",
    "TraceEntry",
    "SolveReport",
    "primal_step",
    "dual_step_counterfactual",
    "solve_counterfactual",
    "solve_fixed_slack",
]


@dataclass(frozen=True)
class SolverConfig:
    eta: float = 1e-2
    max_iterations: int = 200_000
    tol: float = 1e-6
    trace_stride: int = 100

    def __post_init__(self):
        if not self.eta > 0:
            raise InvalidArgumentError("step size eta must be positive")
        if not self.tol > 0:
            raise InvalidArgumentError("tolerance must be positive")
        if self.max_iterations < 1:
            raise InvalidArgumentError("max_iterations must be at least 1")
        if self.trace_stride < 1:
            raise InvalidArgumentError("trace_stride must be at least 1")


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    x: np.ndarray
    lam: np.ndarray
    s: np.ndarray
    residual: KKTResidual


@dataclass
class SolveReport:
    state: SaddleState
    residual: KKTResidual
    converged: bool
    iterations: int
    trace: List[TraceEntry] = field(default_factory=list)
    backend: str = "python"

    @property
    def x(self):
        return self.state.x

    @property
    def lam(self):
        return self.state.lam

    @property
    def s(self):
        return self.state.s


def primal_step(prog: ConvexProgram, state: SaddleState, eta: float) -> np.ndarray:
    """Gradient descent step on the Lagrangian in ``x``."""
    lam = np.asarray(state.lam, dtype=float)
    if np.any(lam < 0):
        raise PreconditionError("dual variables must be nonnegative")
    x = np.asarray(state.x, dtype=float)
    g = prog.objective.gradient(x) + lam @ prog.constraint_gradients(x)
    return x - eta * g


def _slacks_from_duals(prog, spec_cost, lam):
    s = spec_cost.gradient_inverse(prog.aggregate(lam))
    if np.any(s < 0):
        raise SpecCostContractError("gradient inverse of the spec cost returned a negative slack")
    return s


def dual_step_counterfactual(prog: ConvexProgram, spec_cost: SpecCost, state: SaddleState, eta: float):
    """Projected dual ascent with slacks tied to the duals.

    Returns ``(lam_new, s_new)``.
    """
    lam = np.asarray(state.lam, dtype=float)
    if np.any(lam < 0):
        raise PreconditionError("dual variables must be nonnegative")
    s_cur = _slacks_from_duals(prog, spec_cost, lam)
    gap = prog.constraint_values(state.x) - prog.expand(s_cur)
    lam_new = np.maximum(lam + eta * gap, 0.0)
    return lam_new, _slacks_from_duals(prog, spec_cost, lam_new)


def _dual_step_fixed(prog, s, state, eta):
    gap = prog.constraint_values(state.x) - prog.expand(s)
    return np.maximum(np.asarray(state.lam, dtype=float) + eta * gap, 0.0)


def _initial(prog, x0, lam0):
    x = np.zeros(prog.n) if x0 is None else np.array(x0, dtype=float).reshape(prog.n)
    lam = np.ones(prog.m_c) if lam0 is None else np.array(lam0, dtype=float).reshape(prog.m_c)
    if np.any(lam < 0):
        raise PreconditionError("initial duals must be nonnegative")
    return x, lam


def _residual_from_row(row, counterfactual):
    return KKTResidual(
        stationarity=float(row[0]),
        feasibility=float(row[1]),
        complementarity=float(row[2]),
        counterfactual=float(row[3]) if counterfactual else None,
    )


def _run_kernel(prog, s_fixed, config, x, lam, backend):
    P0, q0, Pc, qc, rc = prog.stacked
    counterfactual = s_fixed is None
    kernel = {"cython": kernels.compiled_kernel, "python": kernels.python_kernel}.get(backend)
    if kernel is None:
        kernel = kernels.arrow_hurwicz_qp
        backend = kernels.BACKEND
    out = kernel(
        np.ascontiguousarray(P0), np.ascontiguousarray(q0), np.ascontiguousarray(Pc),
        np.ascontiguousarray(qc), np.ascontiguousarray(rc),
        np.ascontiguousarray(prog.group, dtype=np.intp), prog.m_s, SquaredNormCost.inverse_scale,
        np.zeros(prog.m_s) if counterfactual else np.ascontiguousarray(s_fixed, dtype=float),
        counterfactual, x, lam, float(config.eta), int(config.max_iterations),
        float(config.tol), int(config.trace_stride),
    )
    x, lam, s, res, iters, status, tr_it, tr_x, tr_lam, tr_s, tr_res = out
    if status == kernels.DIVERGED:
        raise NumericalDivergenceError(
            f"non-finite iterate at iteration {iters + 1}; try a smaller step size eta "
            f"(currently {config.eta:g})",
            iteration=iters + 1,
        )
    trace = [
        TraceEntry(int(tr_it[k]), tr_x[k].copy(), tr_lam[k].copy(), tr_s[k].copy(),
                   _residual_from_row(tr_res[k], counterfactual))
        for k in range(len(tr_it))
    ]
    return SolveReport(
        state=SaddleState(x=x, lam=lam, s=s, iteration=int(iters)),
        residual=_residual_from_row(res, counterfactual),
        converged=status == kernels.CONVERGED,
        iterations=int(iters),
        trace=trace,
        backend=backend,
    )


def _run_generic(prog, spec_cost, s_fixed, config, x, lam):
    # overflow is caught below as a non-finite iterate
    with np.errstate(over="ignore", invalid="ignore"):
        return _generic_loop(prog, spec_cost, s_fixed, config, x, lam)


def _generic_loop(prog, spec_cost, s_fixed, config, x, lam):
    counterfactual = s_fixed is None
    trace = []
    t = 0
    while True:
        s = _slacks_from_duals(prog, spec_cost, lam) if counterfactual else np.asarray(s_fixed, dtype=float)
        state = SaddleState(x=x, lam=lam, s=s, iteration=t)
        res = kkt_residual(prog, spec_cost if counterfactual else None, state)
        converged = res.max() <= config.tol
        done = converged or t >= config.max_iterations
        if t % config.trace_stride == 0 or done:
            trace.append(TraceEntry(t, x.copy(), lam.copy(), s.copy(), res))
        if done:
            return SolveReport(state, res, converged, t, trace, backend="generic")
        x_new = primal_step(prog, state, config.eta)
        if counterfactual:
            lam_new, _ = dual_step_counterfactual(prog, spec_cost, state, config.eta)
        else:
            lam_new = _dual_step_fixed(prog, s, state, config.eta)
        if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(lam_new))):
            raise NumericalDivergenceError(
                f"non-finite iterate at iteration {t + 1}; try a smaller step size eta "
                f"(currently {config.eta:g})",
                iteration=t + 1,
            )
        x, lam = x_new, lam_new
        t += 1


def solve_counterfactual(prog: ConvexProgram, spec_cost: SpecCost, config: Optional[SolverConfig] = None,
                         x0=None, lam0=None, backend: Optional[str] = None) -> SolveReport:
    """Solve for the compromise specification.

    Starts from ``x = 0, lam = 1`` unless warm-started.  Returns a report
    with ``converged=False`` when the iteration cap is hit; raises
    :class:`NumericalDivergenceError` on a non-finite iterate.

    ``backend`` may force ``"cython"``, ``"python"`` or ``"generic"``;
    by default the fastest applicable loop is used.
    """
    config = config or SolverConfig()
    if spec_cost.dim != prog.m_s:
        raise InvalidArgumentError(f"spec cost has dimension {spec_cost.dim}, program has {prog.m_s} slacks")
    x, lam = _initial(prog, x0, lam0)
    fast = prog.is_quadratic and type(spec_cost) is SquaredNormCost and backend != "generic"
    report = _run_kernel(prog, None, config, x, lam, backend) if fast else _run_generic(prog, spec_cost, None, config, x, lam)
    log.debug("counterfactual solve: %d iterations, converged=%s, residual=%.3g",
              report.iterations, report.converged, report.residual.max())
    return report


def solve_fixed_slack(prog: ConvexProgram, s, config: Optional[SolverConfig] = None,
                      x0=None, lam0=None, backend: Optional[str] = None) -> SolveReport:
    """Classical Arrow-Hurwicz iteration at the fixed specification ``s``.

    The counterfactual residual component is reported as None.
    """
    config = config or SolverConfig()
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if s.shape != (prog.m_s,):
        raise InvalidArgumentError(f"slack vector has shape {s.shape}, expected ({prog.m_s},)")
    if np.any(s < 0):
        raise PreconditionError("slacks must be nonnegative")
    x, lam = _initial(prog, x0, lam0)
    if prog.is_quadratic and backend != "generic":
        report = _run_kernel(prog, s, config, x, lam, backend)
    else:
        report = _run_generic(prog, None, s, config, x, lam)
    log.debug("fixed-slack solve: %d iterations, converged=%s", report.iterations, report.converged)
    return report
