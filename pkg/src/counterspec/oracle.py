"""Brute-force checks on the perturbation function ``p*(s)``.

Everything here is deliberately independent of the saddle-point iteration
where possible: programs with ``n <= 2`` are solved by refined grid search,
so a counterfactual solve can be certified against values that never went
through the Arrow-Hurwicz loop.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import (
    InsufficientGridError,
    InvalidArgumentError,
    OracleInconsistencyError,
    StencilError,
    UndefinedDifficultyError,
)
from .problem import ConvexProgram, QuadraticFunction, SpecCost, dual_function_value
from .solver import SolverConfig, solve_fixed_slack

__all__ = [
    "PerturbationSample",
    "GridSpec",
    "CompromiseCertificate",
    "SensitivityResult",
    "p_star_oracle",
    "p_star_samples",
    "verify_compromise",
    "sensitivity_check",
    "constraint_difficulty",
]

INFEASIBLE = math.inf
MIN_FEASIBLE_POINTS = 16
MAX_FIRST_LEVEL = 1_000_000
MAX_LEVELS = 200


@dataclass(frozen=True)
class PerturbationSample:
    s: np.ndarray
    p_star: float
    x_star: Optional[np.ndarray] = None

    @property
    def feasible(self) -> bool:
        return math.isfinite(self.p_star)


@dataclass(frozen=True)
class GridSpec:
    """Regular slack grid over the box ``[lower, upper]`` with spacing ``step``."""

    lower: Sequence[float]
    upper: Sequence[float]
    step: float

    def points(self) -> np.ndarray:
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or np.any(hi < lo) or not self.step > 0:
            raise InvalidArgumentError("grid needs lower <= upper and a positive step")
        axes = [lo[j] + self.step * np.arange(int(round((hi[j] - lo[j]) / self.step)) + 1) for j in range(lo.size)]
        return np.array(list(itertools.product(*axes)))


@dataclass(frozen=True)
class CompromiseCertificate:
    s_dagger: np.ndarray
    references: np.ndarray
    worst_violation: float
    worst_reference: Optional[np.ndarray]
    q_dagger: float
    tolerance: float
    skipped: int

    @property
    def passed(self) -> bool:
        return self.worst_violation <= self.tolerance

    def as_dict(self) -> dict:
        return {
            "s_dagger": self.s_dagger.tolist(),
            "q_dagger": self.q_dagger,
            "worst_violation": self.worst_violation,
            "worst_reference": None if self.worst_reference is None else self.worst_reference.tolist(),
            "tolerance": self.tolerance,
            "n_references": int(len(self.references)),
            "skipped_infeasible": self.skipped,
            "passed": self.passed,
        }


@dataclass(frozen=True)
class SensitivityResult:
    s: np.ndarray
    lam_oracle: np.ndarray
    lam_solver: np.ndarray
    max_error: float

    def __iter__(self):
        # unpacks as (lam_oracle, max_error)
        return iter((self.lam_oracle, self.max_error))


def _gradients(fun, X):
    if isinstance(fun, QuadraticFunction):
        return X @ fun.P + fun.q
    return np.stack([fun.gradient(x) for x in X])


def _unit_grid(n, k):
    axes = [np.linspace(-1.0, 1.0, k)] * n
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)


def _next_frames(prog, Z, F, best_x, best_f, frame, h):
    """Oriented search boxes for the next level, one per row.

    A feasible grid point lies within one cell of the true minimizer, so it
    sits below ``best_f`` plus the slope and curvature allowance computed
    here; the near-optimal points are boxed along their principal axes.
    Returns ``(center, frame, half_widths)``.
    """
    R, n = best_x.shape
    g0 = _gradients(prog.objective, best_x)
    # offset d to the nearest feasible grid point has |d_j| <= h_j, so
    # f rises by at most sum |g_j| h_j + (sum sqrt(H_jj) h_j)^2 / 2
    slope_h = np.zeros(R)
    root_curv_h = np.zeros(R)
    for j in range(n):
        q = frame[:, :, j]
        slope_h += np.abs(np.sum(g0 * q, axis=1)) * h[:, j]
        shifted = _gradients(prog.objective, best_x + h[:, j, None] * q)
        hjj = np.maximum(np.sum((shifted - g0) * q, axis=1) / h[:, j], 0.0)
        root_curv_h += np.sqrt(hjj) * h[:, j]
    level = best_f + 2.0 * (slope_h + 0.5 * root_curv_h ** 2) + 1e-15 * (1.0 + np.abs(best_f))
    near = (F <= level[:, None]).astype(float)
    count = near.sum(axis=1)
    mean = np.einsum("rk,rki->ri", near, Z) / count[:, None]
    D = Z - mean[:, None, :]
    cov = np.einsum("rk,rki,rkj->rij", near, D, D) / count[:, None, None]
    _, axes = np.linalg.eigh(cov)
    coords = np.einsum("rki,rij->rkj", D, axes)
    mask = near[:, :, None] > 0
    lo = np.where(mask, coords, np.inf).min(axis=1)
    hi = np.where(mask, coords, -np.inf).max(axis=1)
    # projected cell size of the old grid along each new axis
    cell = np.einsum("rjk,rk->rj", np.abs(np.einsum("rij,rik->rjk", axes, frame)), h)
    center = mean + np.einsum("rij,rj->ri", axes, 0.5 * (lo + hi))
    return center, axes, 0.5 * (hi - lo) + 2.0 * cell


def _grid_min_batch(prog, S_con, box_lo, box_hi, resolution, points):
    """Refined grid minimization of f0 over ``{f_i(z) <= S_con[r, i]}`` per row.

    Returns ``(best_x, best_f)`` with ``best_f = inf`` on rows where no
    point of the first grid was feasible.
    """
    n = prog.n
    S_con = np.atleast_2d(S_con)
    R = len(S_con)
    box_lo = np.asarray(box_lo, dtype=float)
    box_hi = np.asarray(box_hi, dtype=float)
    best_x = np.full((R, n), np.nan)
    best_f = np.full(R, np.inf)

    # First level: one shared axis-aligned grid over the whole box.  A thin
    # feasible set can slip between coarse grid points, so rows with too few
    # feasible points are re-sampled on a denser grid.
    cache = {}

    def shared(k):
        if k not in cache:
            Z = 0.5 * (box_lo + box_hi) + 0.5 * _unit_grid(n, k) * (box_hi - box_lo)
            C = np.stack([c.value_batch(Z) for c in prog.constraints])
            cache[k] = (Z, prog.objective.value_batch(Z), C)
        return cache[k]

    center = np.zeros((R, n))
    frame = np.tile(np.eye(n), (R, 1, 1))
    half = np.zeros((R, n))
    active = np.zeros(R, dtype=bool)
    for r in range(R):
        k = points
        while True:
            Z, F, C = shared(k)
            ok = np.all(C <= S_con[r][:, None], axis=0)
            if ok.sum() >= MIN_FEASIBLE_POINTS or (3 * k - 2) ** n > MAX_FIRST_LEVEL:
                break
            k = 3 * k - 2
        if not ok.any():
            continue
        Fr = np.where(ok, F, np.inf)
        j = int(np.argmin(Fr))
        best_x[r], best_f[r] = Z[j], Fr[j]
        h = (box_hi - box_lo) / (k - 1)
        if h.max() <= resolution:
            continue
        c, fr, w = _next_frames(prog, Z[None], Fr[None], best_x[r:r + 1], best_f[r:r + 1], frame[r:r + 1], h[None])
        center[r], frame[r], half[r] = c[0], fr[0], w[0]
        active[r] = True

    U = _unit_grid(n, points)
    for _ in range(MAX_LEVELS):
        rows = np.flatnonzero(active)
        if rows.size == 0:
            break
        fr, w = frame[rows], half[rows]
        Z = center[rows][:, None, :] + np.einsum("rij,rkj->rki", fr, U[None] * w[:, None, :])
        flat = Z.reshape(-1, n)
        ok = np.ones(flat.shape[0], dtype=bool)
        for i, c in enumerate(prog.constraints):
            ok &= c.value_batch(flat) <= np.repeat(S_con[rows, i], len(U))
        F = np.where(ok, prog.objective.value_batch(flat), np.inf).reshape(len(rows), -1)
        j = np.argmin(F, axis=1)
        fj = F[np.arange(len(rows)), j]
        better = fj < best_f[rows]
        best_f[rows[better]] = fj[better]
        best_x[rows[better]] = Z[np.flatnonzero(better), j[better]]
        h = 2.0 * w / (points - 1)
        finished = h.max(axis=1) <= resolution
        active[rows[finished]] = False
        # a level without feasible points recenters on the incumbent, which
        # is then a grid point of the next level
        empty = ~np.isfinite(fj) & ~finished
        center[rows[empty]] = best_x[rows[empty]]
        half[rows[empty]] *= 0.5
        keep = ~finished & ~empty
        if keep.any():
            r_keep = rows[keep]
            c, fr_new, w_new = _next_frames(prog, Z[keep], F[keep], best_x[r_keep], best_f[r_keep], fr[keep], h[keep])
            center[r_keep], frame[r_keep], half[r_keep] = c, fr_new, w_new
    if active.any():
        bad = S_con[np.flatnonzero(active)[0]]
        raise OracleInconsistencyError(
            f"grid refinement did not reach resolution {resolution:g} within {MAX_LEVELS} levels "
            f"(constraint bounds {bad.tolist()}); the feasible set may be too thin for the grid"
        )
    return best_x, best_f


def _grid_samples(prog, S, box, resolution, points):
    lo = np.full(prog.n, float(box[0]))
    hi = np.full(prog.n, float(box[1]))
    pts = points or (2001 if prog.n == 1 else 41)
    X, F = _grid_min_batch(prog, np.stack([prog.expand(s) for s in S]), lo, hi, resolution, pts)
    return [
        PerturbationSample(s.copy(), float(f), x.copy()) if math.isfinite(f) else PerturbationSample(s.copy(), INFEASIBLE, None)
        for s, x, f in zip(S, X, F)
    ]


def _dual_newton(prog, s, tol=1e-10, max_iterations=500, lam_cap=1e10):
    """Maximize the dual function of an all-quadratic program.

    Projected Newton on ``lam >= 0``: coordinates pinned at zero with a
    descent gradient take a scaled gradient step, the rest a damped Newton
    step, followed by an Armijo search along the projected arc.  Returns
    ``(d, x, lam)`` at a point where the projected gradient is below
    ``tol``, or ``None`` once the duals exceed ``lam_cap``, which happens
    exactly when the dual is unbounded, i.e. ``s`` is infeasible.
    """
    P0, q0, Pc, qc, rc = prog.stacked
    # p*(s) is homogeneous in the objective, so solve with unit curvature
    # and scale back; a tiny objective would otherwise leave tiny duals
    c = float(np.linalg.norm(P0, 2))
    P0, q0, r0 = P0 / c, q0 / c, prog.objective.r / c
    se = prog.expand(s)

    def inner(lam):
        H = P0 + np.tensordot(lam, Pc, axes=1)
        b = q0 + lam @ qc
        try:
            x = np.linalg.solve(H, -b)
        except np.linalg.LinAlgError:
            return None
        g = np.einsum("i,kij,j->k", x, Pc, x) / 2 + qc @ x + rc - se
        d = 0.5 * x @ P0 @ x + q0 @ x + r0 + lam @ g
        return d, x, g, H

    lam = np.zeros(prog.m_c)
    cur = inner(lam)
    if cur is None:
        raise OracleInconsistencyError("objective Hessian is singular; the dual oracle needs strong convexity")
    for _ in range(max_iterations):
        d, x, g, H = cur
        if np.max(lam, initial=0.0) > lam_cap:
            return None
        proj = lam - np.maximum(lam + g, 0.0)
        if np.max(np.abs(proj)) <= tol:
            return c * d, x, c * lam
        eps = min(1e-3, float(np.linalg.norm(proj)))
        pinned = (lam <= eps) & (g < 0)
        free = ~pinned
        J = np.einsum("kij,j->ki", Pc, x) + qc
        M = J[free] @ np.linalg.solve(H, J[free].T)
        scale = max(float(np.max(np.diag(M), initial=0.0)), 1e-300)
        direction = np.zeros(prog.m_c)
        direction[free] = np.linalg.solve(M + 1e-10 * scale * np.eye(len(M)), g[free])
        direction[pinned] = g[pinned] / scale

        def gain_ok(trial, base_d, base_lam, base_g, value):
            return value >= base_d + 1e-4 * (base_g @ (trial - base_lam))

        t = 1.0
        while True:
            trial = np.maximum(lam + t * direction, 0.0)
            nxt = inner(trial)
            if nxt is not None and gain_ok(trial, d, lam, g, nxt[0]) and nxt[0] >= d:
                break
            t *= 0.5
            if t < 1e-14:
                raise OracleInconsistencyError(
                    f"dual line search failed at s={np.asarray(s).tolist()} (projected gradient {np.max(np.abs(proj)):.3g})"
                )
        if t == 1.0:
            # along a ray of ascent (an infeasible s) keep doubling the step
            while np.max(trial) <= lam_cap:
                wider = np.maximum(lam + 2 * t * direction, 0.0)
                far = inner(wider)
                if far is None or not far[0] > nxt[0] + 1e-4 * abs(nxt[0] - d):
                    break
                trial, nxt, t = wider, far, 2 * t
        lam, cur = trial, nxt
    raise OracleInconsistencyError(f"dual maximization at s={np.asarray(s).tolist()} did not converge")


def p_star_oracle(prog: ConvexProgram, s, box=(-5.0, 5.0), resolution: float = 1e-8,
                  points: Optional[int] = None, solver_config: Optional[SolverConfig] = None) -> PerturbationSample:
    """Optimal value of the program at specification ``s``.

    For ``n <= 2`` an exhaustive grid over ``box`` is refined until its
    spacing reaches ``resolution``; no feasible grid point gives the
    infinite marker.  Larger all-quadratic programs are solved by
    maximizing the dual function with projected Newton steps; duals that
    diverge mark ``s`` infeasible, and the dual maximizer must be primal
    feasible to 1e-8 with a duality gap below 1e-4.  Anything else runs the
    fixed-slack iteration (``eta=1e-3``, ``tol=1e-8``), cross-checked the
    same way against the dual function at the returned duals.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if s.shape != (prog.m_s,):
        raise InvalidArgumentError(f"slack vector has shape {s.shape}, expected ({prog.m_s},)")
    if np.any(s < 0):
        raise InvalidArgumentError("slacks must be nonnegative")
    if prog.n <= 2:
        return _grid_samples(prog, [s], box, resolution, points)[0]

    if prog.is_quadratic:
        out = _dual_newton(prog, s)
        if out is None:
            return PerturbationSample(s.copy(), INFEASIBLE, None)
        d, x, lam = out
        p = prog.objective.value(x)
        viol = float(np.max(prog.constraint_values(x) - prog.expand(s)))
        if viol > 1e-8 or abs(p - d) > 1e-4:
            raise OracleInconsistencyError(
                f"dual maximizer at s={s.tolist()} is not primal optimal (violation {viol:.3g}, gap {p - d:.3g})"
            )
        return PerturbationSample(s.copy(), p, x.copy())

    config = solver_config or SolverConfig(eta=1e-3, tol=1e-8, max_iterations=2_000_000, trace_stride=1_000_000)
    report = solve_fixed_slack(prog, s, config)
    if not report.converged:
        raise OracleInconsistencyError(
            f"fixed-slack solve at s={s.tolist()} did not converge (residual {report.residual.max():.3g})"
        )
    p = prog.objective.value(report.x)
    d = dual_function_value(prog, report.lam, s)
    if abs(d - p) > 1e-4:
        raise OracleInconsistencyError(f"duality gap {p - d:.3g} at s={s.tolist()} exceeds 1e-4")
    return PerturbationSample(s.copy(), p, report.x.copy())


def p_star_samples(prog: ConvexProgram, S, box=(-5.0, 5.0), resolution: float = 1e-8,
                   points: Optional[int] = None, solver_config: Optional[SolverConfig] = None):
    """:func:`p_star_oracle` over the rows of ``S``; grid searches run batched."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.shape[1] != prog.m_s:
        raise InvalidArgumentError(f"slack rows have length {S.shape[1]}, expected {prog.m_s}")
    if np.any(S < 0):
        raise InvalidArgumentError("slacks must be nonnegative")
    if prog.n <= 2:
        return _grid_samples(prog, S, box, resolution, points)
    return [p_star_oracle(prog, s, box, resolution, points, solver_config) for s in S]


def verify_compromise(prog: ConvexProgram, spec_cost: SpecCost, s_dagger, grid_spec,
                      tolerance: float = 1e-6, **oracle_kw) -> CompromiseCertificate:
    """Check ``p*(s+) + h(s+) <= p*(s0) + h(s0)`` over feasible references.

    ``grid_spec`` is a :class:`GridSpec` or an explicit ``(k, m_s)`` array of
    reference slacks.  Infeasible references are skipped.
    """
    s_dagger = np.atleast_1d(np.asarray(s_dagger, dtype=float))
    if np.any(s_dagger < 0):
        raise InvalidArgumentError("s_dagger must be nonnegative")
    refs = grid_spec.points() if isinstance(grid_spec, GridSpec) else np.atleast_2d(np.asarray(grid_spec, dtype=float))
    if refs.shape[1] != prog.m_s:
        raise InvalidArgumentError("reference slacks do not match the program's slack dimension")
    q_dag = p_star_oracle(prog, s_dagger, **oracle_kw).p_star + spec_cost.value(s_dagger)
    worst, worst_ref, skipped = -math.inf, None, 0
    for s0, sample in zip(refs, p_star_samples(prog, refs, **oracle_kw)):
        if not sample.feasible:
            skipped += 1
            continue
        v = q_dag - (sample.p_star + spec_cost.value(s0))
        if v > worst:
            worst, worst_ref = v, s0.copy()
    if worst_ref is None:
        raise InsufficientGridError("every reference specification is infeasible")
    return CompromiseCertificate(s_dagger, refs, float(worst), worst_ref, float(q_dag), tolerance, skipped)


def sensitivity_check(prog: ConvexProgram, s, fd_step: float = 1e-3,
                      solver_config: Optional[SolverConfig] = None, **oracle_kw) -> SensitivityResult:
    """Compare ``-grad p*(s)`` (finite differences) with the solver's ``G^T lam``.

    Central differences are used except where ``s_j < fd_step``, where a
    forward difference keeps the stencil inside the nonnegative orthant.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    m = prog.m_s
    steps = np.eye(m) * fd_step
    central = s >= fd_step
    # stencil rows: s, then s + e_j, then s - e_j where central
    stencil = np.vstack([s, s + steps, (s - steps)[central]])
    samples = p_star_samples(prog, stencil, **oracle_kw)
    base, up = samples[0], samples[1:m + 1]
    down = iter(samples[m + 1:])
    if not base.feasible:
        raise StencilError(f"p* is infinite at s={s.tolist()}")
    grad = np.empty(m)
    for j in range(m):
        lower = next(down) if central[j] else base
        if not (up[j].feasible and lower.feasible):
            raise StencilError(f"infeasible stencil point around s={s.tolist()}")
        grad[j] = (up[j].p_star - lower.p_star) / (2 * fd_step if central[j] else fd_step)
    lam_oracle = -grad
    config = solver_config or SolverConfig(tol=1e-8, max_iterations=2_000_000, trace_stride=1_000_000)
    report = solve_fixed_slack(prog, s, config)
    lam_solver = prog.aggregate(report.lam)
    return SensitivityResult(s.copy(), lam_oracle, lam_solver, float(np.max(np.abs(lam_oracle - lam_solver))))


def constraint_difficulty(prog: ConvexProgram, i: int, delta: float, **oracle_kw) -> float:
    """Performance gained by relaxing slack column ``i`` by ``delta``.

    ``inf`` means the relaxation restores feasibility of an infeasible
    nominal specification.
    """
    if not delta > 0:
        raise InvalidArgumentError("delta must be positive")
    if not 0 <= i < prog.m_s:
        raise InvalidArgumentError(f"slack index {i} out of range")
    nominal = p_star_oracle(prog, np.zeros(prog.m_s), **oracle_kw)
    e = np.zeros(prog.m_s)
    e[i] = delta
    relaxed = p_star_oracle(prog, e, **oracle_kw)
    if not relaxed.feasible:
        raise UndefinedDifficultyError("both the nominal and the relaxed specification are infeasible")
    if not nominal.feasible:
        return math.inf
    return nominal.p_star - relaxed.p_star
