"""Navigation over terrain with position-dependent friction.

The agent is a planar double integrator whose velocity is damped by a
friction coefficient that grows towards the origin (``||p||^-2``) and
vanishes inside a slippery disc of radius 0.3.  An MPC loop measures the
friction at the current position only, plans ``T`` steps with that
coefficient frozen, and applies the first input.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .control import (
    ControlSolution,
    HorizonProblem,
    LinearDynamics,
    LqrWeights,
    shift_warm_start,
    solve_cf_control,
    solve_lqr,
)
from .errors import CounterspecError, InvalidArgumentError, TickError
from .problem import SquaredNormCost
from .solver import SolverConfig

log = logging.getLogger(__name__)

SLIPPERY_RADIUS = 0.3
DEFAULT_X0 = (1.5, 1.5, 0.0, 0.0)


def friction(p) -> float:
    """Friction coefficient at position ``p``; zero on the slippery disc."""
    r2 = float(p[0]) ** 2 + float(p[1]) ** 2
    if math.sqrt(r2) <= SLIPPERY_RADIUS:
        return 0.0
    return 1.0 / r2


def _zoh_gains(gamma, ts):
    """Per-axis ZOH coefficients ``(decay, p_from_v, v_from_a, p_from_a)``."""
    if gamma == 0.0:
        return 1.0, ts, ts, ts * ts / 2.0
    gt = gamma * ts
    decay = math.exp(-gt)
    phi1 = -math.expm1(-gt) / gamma  # (1 - e^{-gT}) / g
    if gt < 1e-4:
        # series of (T - phi1) / g, avoids cancellation
        phi2 = ts * ts * (0.5 - gt / 6.0 + gt * gt / 24.0)
    else:
        phi2 = (ts - phi1) / gamma
    return decay, phi1, phi1, phi2


def discretize(gamma: float, ts: float) -> LinearDynamics:
    """Exact zero-order-hold discretization with frozen friction.

    State ``(p_x, p_y, v_x, v_y)``, input ``(a_x, a_y)``; the axes are
    identical and decoupled.
    """
    if gamma < 0 or not ts > 0:
        raise InvalidArgumentError("need gamma >= 0 and Ts > 0")
    decay, p_v, v_a, p_a = _zoh_gains(float(gamma), float(ts))
    A = np.eye(4)
    B = np.zeros((4, 2))
    for ax in range(2):
        A[ax, 2 + ax] = p_v
        A[2 + ax, 2 + ax] = decay
        B[ax, ax] = p_a
        B[2 + ax, ax] = v_a
    return LinearDynamics(A, B)


@dataclass(frozen=True)
class SimConfig:
    """MPC experiment settings.

    ``controller`` is ``"cf"`` (counterfactual) or ``"lqr"``; the LQR
    baseline uses ``Q_t = lqr_q_scale * I`` and ``R_t = lqr_r_scale * I``.
    """

    ts: float = 0.5
    horizon: int = 3
    threshold: float = 0.1
    max_steps: int = 200
    x0: tuple = DEFAULT_X0
    controller: str = "cf"
    lqr_q_scale: float = 1.0
    lqr_r_scale: float = 1.0
    epsilon: float = 1e-6
    solver: SolverConfig = field(default_factory=SolverConfig)
    warm_start: bool = True

    def __post_init__(self):
        if not self.ts > 0 or self.horizon < 1 or not self.threshold > 0:
            raise InvalidArgumentError("need Ts > 0, T >= 1 and threshold > 0")
        if self.controller not in ("cf", "lqr"):
            raise InvalidArgumentError(f"unknown controller {self.controller!r}")
        if len(self.x0) != 4:
            raise InvalidArgumentError("x0 must have 4 entries (p_x, p_y, v_x, v_y)")
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))

    def lqr_weights(self) -> LqrWeights:
        return LqrWeights.identity(self.horizon, 4, 2, self.lqr_q_scale, self.lqr_r_scale)


@dataclass(frozen=True)
class AgentState:
    position: np.ndarray
    velocity: np.ndarray

    @classmethod
    def from_vector(cls, x):
        x = np.asarray(x, dtype=float)
        return cls(x[:2].copy(), x[2:].copy())

    def vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity])


@dataclass
class StepRecord:
    step: int
    state: np.ndarray
    input: np.ndarray
    gamma: float
    s_x: Optional[np.ndarray] = None
    s_u: Optional[np.ndarray] = None
    plan: Optional[ControlSolution] = None
    tick_seconds: float = 0.0


@dataclass
class Trajectory:
    controller: str
    records: List[StepRecord]
    final_state: np.ndarray
    converged: bool

    @property
    def steps_to_threshold(self) -> Optional[int]:
        return len(self.records) if self.converged else None

    @property
    def energy(self) -> float:
        return float(sum(float(r.input @ r.input) for r in self.records))

    @property
    def tick_seconds(self) -> List[float]:
        return [r.tick_seconds for r in self.records]


class MpcController:
    """Receding-horizon planner; keeps the warm start between ticks."""

    def __init__(self, sim: SimConfig):
        self.sim = sim
        self._warm = None
        self._cost = SquaredNormCost(6)

    def reset(self):
        self._warm = None

    def plan(self, x, gamma: float) -> ControlSolution:
        sim = self.sim
        dyn = discretize(gamma, sim.ts)
        if sim.controller == "lqr":
            return solve_lqr(dyn, x, sim.horizon, sim.lqr_weights())
        hp = HorizonProblem(dyn, x, sim.horizon, sim.epsilon)
        u0, lam0 = self._warm if (sim.warm_start and self._warm is not None) else (None, None)
        sol = solve_cf_control(hp, self._cost, sim.solver, u0=u0, lam0=lam0)
        self._warm = shift_warm_start(sol)
        return sol


def mpc_tick(sim: SimConfig, current: AgentState, controller: Optional[MpcController] = None, step: int = 0):
    """Plan from ``current`` and return ``(u_1, plan)``.

    Raises :class:`TickError` if the planner fails.
    """
    controller = controller or MpcController(sim)
    x = current.vector()
    gamma = friction(current.position)
    try:
        plan = controller.plan(x, gamma)
    except CounterspecError as exc:
        raise TickError(f"planner failed at step {step}: {exc}", step=step, cause=exc) from exc
    return plan.inputs[0].copy(), plan


def run_simulation(sim: SimConfig, controller: Optional[MpcController] = None) -> Trajectory:
    """Run MPC until ``||x|| <= threshold`` or ``max_steps`` inputs were applied."""
    controller = controller or MpcController(sim)
    x = np.array(sim.x0, dtype=float)
    records = []
    for step in range(sim.max_steps + 1):
        if np.linalg.norm(x) <= sim.threshold:
            return Trajectory(sim.controller, records, x, True)
        if step == sim.max_steps:
            break
        state = AgentState.from_vector(x)
        gamma = friction(state.position)
        t0 = time.perf_counter()
        u, plan = mpc_tick(sim, state, controller, step)
        elapsed = time.perf_counter() - t0
        records.append(StepRecord(step, x.copy(), u, gamma, plan.s_x, plan.s_u, plan, elapsed))
        x = discretize(gamma, sim.ts).step(x, u)
        log.debug("step %d: |x|=%.4f gamma=%.3f u=%s", step, np.linalg.norm(x), gamma, u)
    log.info("%s controller hit the step cap (%d)", sim.controller, sim.max_steps)
    return Trajectory(sim.controller, records, x, False)


def match_lqr_completion(sim: SimConfig, target_steps: int, q_range=(1.0, 50.0), iterations: int = 30):
    """Smallest LQR state weight ``q`` (``Q_t = q I``) finishing within ``target_steps``.

    Bisects on ``log q`` assuming heavier state weights finish no later.
    Returns ``(q, trajectory)`` or ``(None, None)`` when even ``q_range[1]``
    is too slow.
    """
    def run(q):
        cfg = replace(sim, controller="lqr", lqr_q_scale=q)
        return run_simulation(cfg)

    lo, hi = math.log(q_range[0]), math.log(q_range[1])
    best = run(math.exp(hi))
    if not best.converged or best.steps_to_threshold > target_steps:
        return None, None
    q_best = math.exp(hi)
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        tr = run(math.exp(mid))
        if tr.converged and tr.steps_to_threshold <= target_steps:
            hi, best, q_best = mid, tr, math.exp(mid)
        else:
            lo = mid
    return q_best, best
