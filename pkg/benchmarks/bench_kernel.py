"""Time the compiled and pure-numpy Arrow-Hurwicz loops on the same programs.

Usage: ``python3 benchmarks/bench_kernel.py [--repeat N]``.  Prints one line
per (program, backend) with the best wall time and the speedup.
"""
import argparse
import time

import numpy as np

from counterspec import kernels
from counterspec.control import HorizonProblem, condense
from counterspec.fixtures import qp1d, random_qp
from counterspec.problem import SquaredNormCost
from counterspec.solver import SolverConfig, solve_counterfactual
from counterspec.terrain import discretize


def programs():
    yield "qp1d", qp1d(), SolverConfig()
    yield "qp2d seed 0", random_qp(0), SolverConfig()
    hp = HorizonProblem(discretize(1.0, 0.5), np.array([1.5, 1.5, 0.0, 0.0]), 3, 1e-6)
    yield "mpc horizon 3", condense(hp), SolverConfig(eta=1e-2, max_iterations=20_000, tol=1e-12)


def best_time(prog, config, backend, repeat):
    cost = SquaredNormCost(prog.m_s)
    best, report = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        report = solve_counterfactual(prog, cost, config, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, report


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if kernels.compiled_kernel is None:
        print("compiled kernel not built; only the python loop is available")
    print(f"{'program':<16}{'backend':<9}{'iters':>8}{'seconds':>11}{'speedup':>9}")
    for name, prog, config in programs():
        t_py, rep_py = best_time(prog, config, "python", args.repeat)
        print(f"{name:<16}{'python':<9}{rep_py.iterations:>8}{t_py:>11.4f}{1.0:>9.1f}")
        if kernels.compiled_kernel is None:
            continue
        t_cy, rep_cy = best_time(prog, config, "cython", args.repeat)
        assert rep_cy.iterations == rep_py.iterations
        assert np.allclose(rep_cy.s, rep_py.s, atol=1e-10)
        print(f"{name:<16}{'cython':<9}{rep_cy.iterations:>8}{t_cy:>11.4f}{t_py / t_cy:>9.1f}")


if __name__ == "__main__":
    main()
