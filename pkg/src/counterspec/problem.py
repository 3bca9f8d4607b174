"""Convex programs with tunable constraint specifications.

A :class:`ConvexProgram` describes

    minimize    f0(x)
    subject to  f_i(x) <= s_{g(i)},   i = 1..m_c

where ``g`` is the constraint-to-slack group map.  Several constraints may
share one slack column; the counterfactual condition then reads
``grad h(s) = G^T lam``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError, NonConvergenceError, PreconditionError

__all__ = [
    "DifferentiableFunction",
    "QuadraticFunction",
    "ConvexProgram",
    "SpecCost",
    "SquaredNormCost",
    "SaddleState",
    "KKTResidual",
    "lagrangian_eval",
    "kkt_residual",
    "dual_function_value",
    "lagrangian_argmin",
]


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


def _vector(x, n, name):
    v = np.asarray(x, dtype=float)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.shape != (n,):
        raise InvalidArgumentError(f"{name} has shape {v.shape}, expected ({n},)")
    return v


class DifferentiableFunction:
    """A scalar function on R^n with a user supplied gradient.

    Parameters
    ----------
    n : int
        Input dimension.
    fun, grad : callable
        ``fun(x) -> float`` and ``grad(x) -> ndarray`` of shape ``(n,)``.
        Both must be pure.
    """

    def __init__(self, n: int, fun: Callable, grad: Callable):
        if int(n) < 1:
            raise InvalidArgumentError("dimension must be a positive integer")
        self.n = int(n)
        self._fun = fun
        self._grad = grad

    def value(self, x) -> float:
        return float(self._fun(np.asarray(x, dtype=float)))

    def gradient(self, x) -> np.ndarray:
        return np.asarray(self._grad(np.asarray(x, dtype=float)), dtype=float).reshape(self.n)

    def value_batch(self, X) -> np.ndarray:
        """Evaluate on the rows of ``X`` (shape ``(k, n)``)."""
        X = np.asarray(X, dtype=float)
        return np.array([self.value(row) for row in X])

    __call__ = value


class QuadraticFunction(DifferentiableFunction):
    """``0.5 x'Px + q'x + r`` with a symmetric ``P``."""

    def __init__(self, P, q, r: float = 0.0):
        P = np.atleast_2d(np.asarray(P, dtype=float))
        q = np.atleast_1d(np.asarray(q, dtype=float))
        n = q.shape[0]
        if P.shape != (n, n):
            raise InvalidArgumentError(f"P has shape {P.shape}, expected ({n}, {n})")
        if np.max(np.abs(P - P.T), initial=0.0) > 1e-12:
            raise InvalidArgumentError("P must be symmetric")
        self.n = n
        self.P = _frozen(P)
        self.q = _frozen(q)
        self.r = float(r)

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float).reshape(self.n)
        return float(0.5 * x @ self.P @ x + self.q @ x + self.r)

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(self.n)
        return self.P @ x + self.q

    def value_batch(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, self.n)
        return 0.5 * np.sum((X @ self.P) * X, axis=1) + X @ self.q + self.r

    def __repr__(self):
        return f"QuadraticFunction(n={self.n}, r={self.r})"


@dataclass(frozen=True, eq=False)
class ConvexProgram:
    """Objective, ordered constraints and the constraint-to-slack map.

    ``group_map`` defaults to the identity (one slack per constraint).
    """

    objective: DifferentiableFunction
    constraints: Sequence[DifferentiableFunction]
    group_map: Optional[np.ndarray] = None

    def __post_init__(self):
        cons = tuple(self.constraints)
        if not cons:
            raise InvalidArgumentError("a program needs at least one constraint")
        n = self.objective.n
        if any(c.n != n for c in cons):
            raise InvalidArgumentError("all functions must share the objective's dimension")
        G = np.eye(len(cons)) if self.group_map is None else np.asarray(self.group_map, dtype=float)
        if G.ndim != 2 or G.shape[0] != len(cons):
            raise InvalidArgumentError(f"group_map must have {len(cons)} rows")
        if not np.all((G == 0) | (G == 1)) or not np.all(G.sum(axis=1) == 1):
            raise InvalidArgumentError("every group_map row needs exactly one entry equal to 1")
        if np.any(G.sum(axis=0) == 0):
            raise InvalidArgumentError("every slack column must be referenced by a constraint")
        object.__setattr__(self, "constraints", cons)
        object.__setattr__(self, "group_map", _frozen(G))

    @property
    def n(self) -> int:
        return self.objective.n

    @property
    def m_c(self) -> int:
        return len(self.constraints)

    @property
    def m_s(self) -> int:
        return self.group_map.shape[1]

    @cached_property
    def group(self) -> np.ndarray:
        """Slack column of each constraint row."""
        return _frozen(np.argmax(self.group_map, axis=1), dtype=np.intp)

    @cached_property
    def is_quadratic(self) -> bool:
        return isinstance(self.objective, QuadraticFunction) and all(
            isinstance(c, QuadraticFunction) for c in self.constraints
        )

    @cached_property
    def stacked(self):
        """``(P0, q0, Pc, qc, rc)`` for all-quadratic programs."""
        if not self.is_quadratic:
            raise InvalidArgumentError("program is not all-quadratic")
        Pc = np.stack([c.P for c in self.constraints])
        qc = np.stack([c.q for c in self.constraints])
        rc = np.array([c.r for c in self.constraints])
        return self.objective.P, self.objective.q, Pc, qc, rc

    def constraint_values(self, x) -> np.ndarray:
        return np.array([c.value(x) for c in self.constraints])

    def constraint_gradients(self, x) -> np.ndarray:
        return np.stack([c.gradient(x) for c in self.constraints])

    def aggregate(self, lam) -> np.ndarray:
        """``G^T lam``: duals summed per slack column."""
        return np.bincount(self.group, weights=np.asarray(lam, dtype=float), minlength=self.m_s)

    def expand(self, s) -> np.ndarray:
        """Per-constraint slack ``s_{g(i)}``."""
        return np.asarray(s, dtype=float)[self.group]


class SpecCost:
    """Cost ``h`` of a specification, with gradient and gradient inverse."""

    def __init__(self, dim: int, fun: Callable, grad: Callable, grad_inverse: Callable):
        self.dim = int(dim)
        self._fun, self._grad, self._inv = fun, grad, grad_inverse

    def value(self, s) -> float:
        return float(self._fun(np.asarray(s, dtype=float)))

    def gradient(self, s) -> np.ndarray:
        return np.asarray(self._grad(np.asarray(s, dtype=float)), dtype=float)

    def gradient_inverse(self, y) -> np.ndarray:
        return np.asarray(self._inv(np.asarray(y, dtype=float)), dtype=float)


class SquaredNormCost(SpecCost):
    """``h(s) = ||s||^2``."""

    inverse_scale = 0.5

    def __init__(self, dim: int):
        self.dim = int(dim)

    def value(self, s) -> float:
        s = np.asarray(s, dtype=float)
        return float(s @ s)

    def gradient(self, s) -> np.ndarray:
        return 2.0 * np.asarray(s, dtype=float)

    def gradient_inverse(self, y) -> np.ndarray:
        return 0.5 * np.asarray(y, dtype=float)

    def __repr__(self):
        return f"SquaredNormCost(dim={self.dim})"


@dataclass
class SaddleState:
    x: np.ndarray
    lam: np.ndarray
    s: np.ndarray
    iteration: int = 0


@dataclass(frozen=True)
class KKTResidual:
    """Convergence certificate; ``counterfactual`` is None for fixed slacks."""

    stationarity: float
    feasibility: float
    complementarity: float
    counterfactual: Optional[float] = None

    def max(self) -> float:
        parts = [self.stationarity, self.feasibility, self.complementarity]
        if self.counterfactual is not None:
            parts.append(self.counterfactual)
        return max(parts)

    def as_dict(self) -> dict:
        return {
            "stationarity": self.stationarity,
            "feasibility": self.feasibility,
            "complementarity": self.complementarity,
            "counterfactual": self.counterfactual,
        }


def _check_duals(prog: ConvexProgram, lam) -> np.ndarray:
    lam = _vector(lam, prog.m_c, "lambda")
    if np.any(lam < 0):
        raise PreconditionError("dual variables must be nonnegative")
    return lam


def lagrangian_eval(prog: ConvexProgram, x, lam, s) -> float:
    """``f0(x) + sum_i lam_i (f_i(x) - s_{g(i)})``."""
    x = _vector(x, prog.n, "x")
    lam = _check_duals(prog, lam)
    s = _vector(s, prog.m_s, "s")
    return prog.objective.value(x) + float(lam @ (prog.constraint_values(x) - prog.expand(s)))


def kkt_residual(prog: ConvexProgram, spec_cost: Optional[SpecCost], state: SaddleState) -> KKTResidual:
    """Residuals of the saddle conditions at ``state``.

    Pass ``spec_cost=None`` for a fixed-slack solve; the counterfactual
    component is then reported as None.
    """
    x = _vector(state.x, prog.n, "x")
    lam = _check_duals(prog, state.lam)
    s = _vector(state.s, prog.m_s, "s")
    gap = prog.constraint_values(x) - prog.expand(s)
    grad = prog.objective.gradient(x) + lam @ prog.constraint_gradients(x)
    cf = None
    if spec_cost is not None:
        cf = float(np.linalg.norm(spec_cost.gradient(s) - prog.aggregate(lam)))
    return KKTResidual(
        stationarity=float(np.linalg.norm(grad)),
        feasibility=float(np.max(np.maximum(gap, 0.0))),
        complementarity=float(np.max(np.abs(lam * gap))),
        counterfactual=cf,
    )


def dual_function_value(prog: ConvexProgram, lam, s, tol: float = 1e-8, max_iterations: int = 100_000) -> float:
    """``min_x L(x, lam, s)`` for a strongly convex objective.

    All-quadratic programs are minimized with one Newton step (exact for a
    quadratic); anything else runs gradient descent with Armijo
    backtracking.  Either way the returned minimizer is certified to have
    Lagrangian gradient norm at most ``tol``.
    """
    lam = _check_duals(prog, lam)
    s = _vector(s, prog.m_s, "s")
    shift = float(lam @ prog.expand(s))

    def grad(x):
        return prog.objective.gradient(x) + lam @ prog.constraint_gradients(x)

    def value(x):
        return prog.objective.value(x) + float(lam @ prog.constraint_values(x)) - shift

    x = np.zeros(prog.n)
    if prog.is_quadratic:
        x = lagrangian_argmin(prog, lam)
        if np.linalg.norm(grad(x)) <= tol:
            return value(x)
    step = 1.0
    fx, g = value(x), grad(x)
    for _ in range(max_iterations):
        gnorm2 = float(g @ g)
        if np.sqrt(gnorm2) <= tol:
            return fx
        while True:
            x_new = x - step * g
            f_new = value(x_new)
            if f_new <= fx - 0.5 * step * gnorm2 or step < 1e-16:
                break
            step *= 0.5
        x, fx, g = x_new, f_new, grad(x_new)
        step = min(step * 2.0, 1e6)
    raise NonConvergenceError("inner minimization of the Lagrangian did not converge", best=fx)


def lagrangian_argmin(prog: ConvexProgram, lam) -> np.ndarray:
    """Exact minimizer of ``L(., lam, s)`` for an all-quadratic program.

    The slack only shifts the Lagrangian, so it does not enter.
    """
    lam = _check_duals(prog, lam)
    P0, q0, Pc, qc, _ = prog.stacked
    H = P0 + np.tensordot(lam, Pc, axes=1)
    rhs = -(q0 + lam @ qc)
    x = np.linalg.solve(H, rhs)
    # one refinement step against roundoff
    return x + np.linalg.solve(H, rhs - H @ x)
