import os
import subprocess
import sys

import numpy as np
import pytest

from counterspec import kernels
from counterspec.fixtures import qp2d_box, random_qp
from counterspec.problem import SquaredNormCost
from counterspec.solver import SolverConfig, solve_counterfactual, solve_fixed_slack

needs_ext = pytest.mark.skipif(kernels.compiled_kernel is None, reason="compiled kernel not built")


def test_backend_name_is_consistent():
    expected = kernels.compiled_kernel if kernels.BACKEND == "cython" else kernels.python_kernel
    assert kernels.arrow_hurwicz_qp is expected


def test_pure_flag_forces_fallback():
    env = dict(os.environ, COUNTERSPEC_PURE="1")
    out = subprocess.run([sys.executable, "-c", "from counterspec import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@needs_ext
@pytest.mark.parametrize("seed", range(5))
def test_compiled_matches_python_counterfactual(seed):
    prog = random_qp(seed)
    cfg = SolverConfig(trace_stride=7)
    a = solve_counterfactual(prog, SquaredNormCost(2), cfg, backend="python")
    b = solve_counterfactual(prog, SquaredNormCost(2), cfg, backend="cython")
    assert a.iterations == b.iterations and a.converged == b.converged
    np.testing.assert_allclose(b.x, a.x, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(b.lam, a.lam, rtol=1e-12, atol=1e-14)
    assert len(a.trace) == len(b.trace)
    for ea, eb in zip(a.trace, b.trace):
        assert ea.iteration == eb.iteration
        np.testing.assert_allclose(eb.s, ea.s, rtol=1e-12, atol=1e-14)


@needs_ext
def test_compiled_matches_python_fixed_slack():
    prog = qp2d_box()
    a = solve_fixed_slack(prog, [0.3, 0.2], backend="python")
    b = solve_fixed_slack(prog, [0.3, 0.2], backend="cython")
    assert a.iterations == b.iterations
    np.testing.assert_allclose(b.lam, a.lam, rtol=1e-12)


def test_kernel_matches_generic_loop():
    prog = random_qp(11)
    a = solve_counterfactual(prog, SquaredNormCost(2), backend="generic")
    b = solve_counterfactual(prog, SquaredNormCost(2), backend="python")
    assert a.iterations == b.iterations
    np.testing.assert_allclose(b.s, a.s, rtol=1e-9, atol=1e-12)
