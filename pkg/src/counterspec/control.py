"""Finite-horizon control problems in condensed form.

The counterfactual controller bounds every squared state and input entry by
a time-shared slack,

    ([x_t]_i)^2 <= s_x,i    ([u_t]_j)^2 <= s_u,j    t = 1..T,

and lets the solver pick ``(s_x, s_u)``.  States are eliminated through
``x_t = A^t x0 + sum_k A^{t-k} B u_k`` so only the inputs remain.  The
objective ``eps ||u||^2`` is a small strongly convex regularizer.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidArgumentError, NonConvergenceError
from .problem import (
    ConvexProgram,
    KKTResidual,
    QuadraticFunction,
    SaddleState,
    SpecCost,
    kkt_residual,
    lagrangian_argmin,
)
from .solver import SolveReport, SolverConfig, solve_counterfactual

__all__ = [
    "LinearDynamics",
    "HorizonProblem",
    "LqrWeights",
    "ControlSolution",
    "prediction_matrices",
    "condense",
    "solve_cf_control",
    "solve_lqr",
    "reconstruct_lqr_weights",
    "DUAL_FLOOR",
]

DUAL_FLOOR = 1e-9


@dataclass(frozen=True, eq=False)
class LinearDynamics:
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
            raise InvalidArgumentError(f"incompatible shapes A{A.shape}, B{B.shape}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise InvalidArgumentError("dynamics must be finite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    def step(self, x, u) -> np.ndarray:
        return self.A @ x + self.B @ u


@dataclass(frozen=True, eq=False)
class HorizonProblem:
    dynamics: LinearDynamics
    x0: np.ndarray
    horizon: int
    epsilon: float = 1e-6

    def __post_init__(self):
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if x0.shape != (self.dynamics.n_states,):
            raise InvalidArgumentError("x0 does not match the state dimension")
        if self.horizon < 1:
            raise InvalidArgumentError("horizon must be at least 1")
        if not self.epsilon > 0:
            raise InvalidArgumentError("epsilon must be positive")
        object.__setattr__(self, "x0", x0)


@dataclass(frozen=True)
class LqrWeights:
    """Diagonals of ``Q_t`` (shape ``(T, l)``) and ``R_t`` (shape ``(T, p)``)."""

    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if Q.shape[0] != R.shape[0]:
            raise InvalidArgumentError("Q and R must cover the same horizon")
        if np.any(Q < 0) or np.any(R <= 0):
            raise InvalidArgumentError("need Q_t >= 0 and R_t > 0")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)

    @classmethod
    def identity(cls, horizon: int, n_states: int, n_inputs: int, q_scale: float = 1.0, r_scale: float = 1.0):
        return cls(np.full((horizon, n_states), float(q_scale)), np.full((horizon, n_inputs), float(r_scale)))


@dataclass
class ControlSolution:
    """Planned inputs and states, rows indexed by ``t = 1..T``.

    ``state_duals``/``input_duals`` and the slacks are None for LQR plans.
    For counterfactual plans ``report`` is the raw solver report and
    ``plan_residual`` the KKT residual of ``inputs`` at the reported duals.
    """

    inputs: np.ndarray
    states: np.ndarray
    state_duals: Optional[np.ndarray] = None
    input_duals: Optional[np.ndarray] = None
    s_x: Optional[np.ndarray] = None
    s_u: Optional[np.ndarray] = None
    epsilon: float = 0.0
    report: Optional[SolveReport] = None
    plan_residual: Optional[KKTResidual] = None


def prediction_matrices(dynamics: LinearDynamics, x0, horizon: int):
    """``(S, c)`` with stacked states ``X = S u + c``.

    ``X`` and ``u`` are time-major: ``X[t*l:(t+1)*l] = x_{t+1}``.
    """
    A, B = dynamics.A, dynamics.B
    l, p = dynamics.n_states, dynamics.n_inputs
    powers = [np.eye(l)]
    for _ in range(horizon):
        powers.append(A @ powers[-1])
    S = np.zeros((l * horizon, p * horizon))
    c = np.zeros(l * horizon)
    for t in range(1, horizon + 1):
        rows = slice((t - 1) * l, t * l)
        c[rows] = powers[t] @ x0
        for k in range(1, t + 1):
            S[rows, (k - 1) * p:k * p] = powers[t - k] @ B
    return S, c


def condense(hp: HorizonProblem) -> ConvexProgram:
    """State-eliminated program in ``u = (u_1, ..., u_T)``.

    Constraint order: the ``l*T`` state constraints (time-major), then the
    ``p*T`` input constraints.  Slack columns: ``0..l-1`` for states,
    ``l..l+p-1`` for inputs.
    """
    l, p, T = hp.dynamics.n_states, hp.dynamics.n_inputs, hp.horizon
    n = p * T
    S, c = prediction_matrices(hp.dynamics, hp.x0, T)
    cons = []
    G = np.zeros((l * T + p * T, l + p))
    for row in range(l * T):
        a = S[row]
        cons.append(QuadraticFunction(2.0 * np.outer(a, a), 2.0 * c[row] * a, c[row] ** 2))
        G[row, row % l] = 1.0
    for k in range(n):
        P = np.zeros((n, n))
        P[k, k] = 2.0
        cons.append(QuadraticFunction(P, np.zeros(n)))
        G[l * T + k, l + k % p] = 1.0
    objective = QuadraticFunction(2.0 * hp.epsilon * np.eye(n), np.zeros(n))
    return ConvexProgram(objective, cons, G)


def _rollout(dynamics, x0, inputs):
    states = []
    x = np.asarray(x0, dtype=float)
    for u in inputs:
        x = dynamics.step(x, u)
        states.append(x)
    return np.array(states)


def solve_cf_control(hp: HorizonProblem, spec_cost: SpecCost, config: Optional[SolverConfig] = None,
                     u0=None, lam0=None) -> ControlSolution:
    """Plan with counterfactually tuned state/input specifications.

    ``u0`` (flattened inputs) and ``lam0`` (per-constraint duals in
    :func:`condense` order) warm-start the solver.  Raises
    :class:`NonConvergenceError` with the partial report attached when the
    iteration cap is hit.
    """
    l, p, T = hp.dynamics.n_states, hp.dynamics.n_inputs, hp.horizon
    if spec_cost.dim != l + p:
        raise InvalidArgumentError(f"spec cost must have dimension {l + p}")
    prog = condense(hp)
    report = solve_counterfactual(prog, spec_cost, config, x0=u0, lam0=lam0)
    if not report.converged:
        raise NonConvergenceError(
            f"counterfactual control solve stopped after {report.iterations} iterations "
            f"with residual {report.residual.max():.3g}",
            report=report,
        )
    # Inactive input directions carry only the eps curvature, so the
    # iterate is loose there; take the exact Lagrangian minimizer at the
    # converged duals (the iteration's own fixed point) as the plan.
    inputs = lagrangian_argmin(prog, report.lam).reshape(T, p)
    lam = report.lam
    recovered = kkt_residual(
        prog, spec_cost, SaddleState(x=inputs.ravel(), lam=lam, s=report.s, iteration=report.iterations)
    )
    return ControlSolution(
        inputs=inputs,
        states=_rollout(hp.dynamics, hp.x0, inputs),
        state_duals=lam[: l * T].reshape(T, l),
        input_duals=lam[l * T:].reshape(T, p),
        s_x=report.s[:l].copy(),
        s_u=report.s[l:].copy(),
        epsilon=hp.epsilon,
        report=report,
        plan_residual=recovered,
    )


def solve_lqr(dynamics: LinearDynamics, x0, horizon: int, weights: LqrWeights) -> ControlSolution:
    """Exact finite-horizon LQR via the condensed normal equations."""
    l, p = dynamics.n_states, dynamics.n_inputs
    if weights.Q.shape != (horizon, l) or weights.R.shape != (horizon, p):
        raise InvalidArgumentError("weights do not match horizon/dimensions")
    x0 = np.asarray(x0, dtype=float)
    S, c = prediction_matrices(dynamics, x0, horizon)
    q = weights.Q.ravel()
    H = S.T @ (q[:, None] * S) + np.diag(weights.R.ravel())
    try:
        u = np.linalg.solve(H, -S.T @ (q * c))
    except np.linalg.LinAlgError as exc:  # pragma: no cover - R > 0 rules this out
        raise RuntimeError("singular LQR normal matrix") from exc
    inputs = u.reshape(horizon, p)
    return ControlSolution(inputs=inputs, states=_rollout(dynamics, x0, inputs))


def lqr_cost(sol: ControlSolution, weights: LqrWeights) -> float:
    return float(np.sum(weights.Q * sol.states ** 2) + np.sum(weights.R * sol.inputs ** 2))


def reconstruct_lqr_weights(sol: ControlSolution) -> LqrWeights:
    """LQR weights whose minimizer is the counterfactual plan.

    ``Q_t = diag(lambda_t)`` and ``R_t = diag(mu_t)``, with ``mu`` floored
    at :data:`DUAL_FLOOR` so that ``R_t`` stays positive definite.  The plan
    also carries the ``eps ||u||^2`` regularizer, which these weights leave
    out; the replayed inputs differ from the plan at that order.
    """
    if sol.state_duals is None:
        raise InvalidArgumentError("solution carries no duals")
    return LqrWeights(Q=sol.state_duals.copy(), R=np.maximum(sol.input_duals, DUAL_FLOOR))


def shift_warm_start(sol: ControlSolution):
    """Shift a plan one step forward for the next MPC tick.

    Returns ``(u0, lam0)`` in :func:`condense` ordering, repeating the last
    step to fill the horizon.
    """
    def shift(a):
        return np.vstack([a[1:], a[-1:]])

    u0 = shift(sol.inputs).ravel()
    lam0 = np.concatenate([shift(sol.state_duals).ravel(), shift(sol.input_duals).ravel()])
    return u0, lam0
