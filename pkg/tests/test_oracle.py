import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from counterspec.control import HorizonProblem, condense, solve_cf_control
from counterspec.errors import (
    InsufficientGridError,
    InvalidArgumentError,
    StencilError,
    UndefinedDifficultyError,
)
from counterspec.fixtures import inactive, infeasible_nominal, qp1d, qp2d_box, random_qp
from counterspec.oracle import (
    GridSpec,
    _dual_newton,
    constraint_difficulty,
    p_star_oracle,
    p_star_samples,
    sensitivity_check,
    verify_compromise,
)
from counterspec.problem import ConvexProgram, DifferentiableFunction, QuadraticFunction, SquaredNormCost
from counterspec.solver import SolverConfig, solve_counterfactual, solve_fixed_slack
from counterspec.terrain import discretize

# expected values are closed forms: p*(s) = (2 - s)_+^2 for qp1d,
# (2 - s1)_+^2 + (1 - s2)_+^2 for the box, (2 - sqrt(s - 1))^2 for the
# infeasible fixture once s >= 1
QP1D_VALUES = [(0.0, 4.0), (0.5, 2.25), (1.0, 1.0), (3.0, 0.0)]


def box3():
    """min ||z - (2, 1, 0.5)||^2 s.t. z_k <= s_k, a 3-variable box."""
    c = np.array([2.0, 1.0, 0.5])
    Z = np.zeros((3, 3))
    cons = [QuadraticFunction(Z, np.eye(3)[k]) for k in range(3)]
    return ConvexProgram(QuadraticFunction(2 * np.eye(3), -2 * c, c @ c), cons), c


@pytest.mark.parametrize("s,expected", QP1D_VALUES)
def test_qp1d_values(s, expected):
    sample = p_star_oracle(qp1d(), [s])
    assert sample.feasible
    assert sample.p_star == pytest.approx(expected, abs=1e-8)
    assert sample.x_star[0] == pytest.approx(min(s, 2.0), abs=1e-4)


def test_infeasible_fixture():
    prog = infeasible_nominal()
    assert p_star_oracle(prog, [0.0]).p_star == math.inf
    assert not p_star_oracle(prog, [0.5]).feasible
    assert p_star_oracle(prog, [2.0]).p_star == pytest.approx(1.0, abs=1e-8)
    assert p_star_oracle(prog, [5.0]).p_star == pytest.approx(0.0, abs=1e-8)


def test_box_values_batched():
    S = np.array([[0.3, 0.2], [1.0, 0.5], [3.0, 2.0], [0.0, 0.0]])
    got = [smp.p_star for smp in p_star_samples(qp2d_box(), S)]
    want = [(2 - a) ** 2 * (a < 2) + (1 - b) ** 2 * (b < 1) for a, b in S]
    np.testing.assert_allclose(got, want, atol=1e-8)


def test_three_variable_program_uses_dual_route():
    prog, c = box3()
    for s in ([0.0, 0.0, 0.0], [1.0, 0.5, 0.2], [3.0, 3.0, 3.0]):
        want = float(np.sum(np.maximum(c - np.array(s), 0.0) ** 2))
        assert p_star_oracle(prog, s).p_star == pytest.approx(want, abs=1e-8)


def test_three_variable_infeasible():
    # z1 <= s1 and 1 - z1 <= s2 clash when s1 + s2 < 1
    Z = np.zeros((3, 3))
    e1 = np.eye(3)[0]
    prog = ConvexProgram(QuadraticFunction(2 * np.eye(3), np.zeros(3)),
                         [QuadraticFunction(Z, e1), QuadraticFunction(Z, -e1, 1.0)])
    assert not p_star_oracle(prog, [0.2, 0.3]).feasible
    assert p_star_oracle(prog, [0.2, 0.8]).p_star == pytest.approx(0.04, abs=1e-8)


def test_non_quadratic_three_variable_program():
    f0 = DifferentiableFunction(3, lambda z: float(np.sum((z - 1) ** 2) + 0.1 * np.sum(z ** 4)),
                                lambda z: 2 * (z - 1) + 0.4 * z ** 3)
    prog = ConvexProgram(f0, [QuadraticFunction(np.zeros((3, 3)), np.ones(3))])
    sample = p_star_oracle(prog, [10.0])
    z = sample.x_star
    # slack is loose: unconstrained minimizer, 2 (z - 1) + 0.4 z^3 = 0
    np.testing.assert_allclose(2 * (z - 1) + 0.4 * z ** 3, 0.0, atol=1e-6)


def test_grid_and_dual_routes_agree():
    rng = np.random.default_rng(0)
    for seed in range(10):
        prog = random_qp(seed)
        S = rng.uniform(0, 2, size=(3, 2))
        grid = p_star_samples(prog, S)
        for s, g in zip(S, grid):
            out = _dual_newton(prog, s)
            assert out is not None and g.feasible
            assert out[0] == pytest.approx(g.p_star, abs=1e-6)


def test_grid_agrees_with_fixed_slack_solver():
    rng = np.random.default_rng(1)
    for seed in range(10):
        prog = random_qp(seed)
        s = rng.uniform(0, 2, size=2)
        rep = solve_fixed_slack(prog, s, SolverConfig(tol=1e-9))
        assert rep.converged
        assert p_star_oracle(prog, s).p_star == pytest.approx(prog.objective.value(rep.x), abs=1e-4)


def test_oracle_argument_checks():
    with pytest.raises(InvalidArgumentError):
        p_star_oracle(qp1d(), [-0.1])
    with pytest.raises(InvalidArgumentError):
        p_star_oracle(qp1d(), [0.1, 0.2])
    with pytest.raises(InvalidArgumentError):
        p_star_samples(qp2d_box(), [[0.1, -0.2]])


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000), data=st.data())
def test_perturbation_function_convex_and_monotone(seed, data):
    prog = random_qp(seed)
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(0, 2, size=(2, 2))
    t = data.draw(st.floats(0.1, 0.9))
    pa, pb, pm, pmax = p_star_samples(prog, [a, b, t * a + (1 - t) * b, np.maximum(a, b)])
    if pa.feasible and pb.feasible:
        assert pm.p_star <= t * pa.p_star + (1 - t) * pb.p_star + 1e-7
    assert pmax.p_star <= min(pa.p_star, pb.p_star) + 1e-7


def test_grid_spec_points():
    pts = GridSpec([0.0, 1.0], [1.0, 2.0], 0.5).points()
    assert pts.shape == (9, 2)
    np.testing.assert_allclose(pts.min(axis=0), [0.0, 1.0])
    np.testing.assert_allclose(pts.max(axis=0), [1.0, 2.0])
    assert GridSpec([0.0], [3.0], 0.05).points().shape == (61, 1)


def test_certificate_at_analytic_compromise():
    cert = verify_compromise(qp1d(), SquaredNormCost(1), [1.0], GridSpec([0.0], [3.0], 0.05), tolerance=1e-6)
    assert cert.passed
    assert cert.worst_violation == pytest.approx(0.0, abs=1e-8)
    assert cert.q_dagger == pytest.approx(2.0, abs=1e-8)


def test_certificate_rejects_a_bad_specification():
    cert = verify_compromise(qp1d(), SquaredNormCost(1), [1.5], GridSpec([0.0], [3.0], 0.05), tolerance=1e-6)
    assert not cert.passed
    # q(1.5) - q(1) = 2.5 - 2
    assert cert.worst_violation == pytest.approx(0.5, abs=1e-8)
    np.testing.assert_allclose(cert.worst_reference, [1.0])


def test_certificate_skips_infeasible_references():
    prog = infeasible_nominal()
    rep = solve_counterfactual(prog, SquaredNormCost(1))
    cert = verify_compromise(prog, SquaredNormCost(1), rep.s, GridSpec([0.0], [4.0], 0.05), tolerance=1e-5)
    assert cert.passed
    assert cert.skipped == 20  # s in [0, 1) is infeasible
    with pytest.raises(InsufficientGridError):
        verify_compromise(prog, SquaredNormCost(1), rep.s, np.array([[0.0], [0.5]]))


def test_sensitivity_matches_multiplier():
    res = sensitivity_check(qp1d(), [1.0])
    assert res.lam_oracle[0] == pytest.approx(2.0, abs=1e-6)
    assert res.lam_solver[0] == pytest.approx(2.0, abs=1e-6)
    lam, err = res
    assert err < 1e-6


def test_sensitivity_forward_difference_at_zero_slack():
    res = sensitivity_check(qp2d_box(), [0.0, 0.5])
    # -dp*/ds = 2 (2 - s1) and 2 (1 - s2); forward difference bias is fd_step
    np.testing.assert_allclose(res.lam_oracle, [4.0, 1.0], atol=2e-3)
    assert res.max_error < 2e-3


def test_sensitivity_stencil_error():
    with pytest.raises(StencilError):
        sensitivity_check(infeasible_nominal(), [0.5])
    with pytest.raises(StencilError):
        sensitivity_check(infeasible_nominal(), [1.0], fd_step=1e-2)


def test_constraint_difficulty():
    assert constraint_difficulty(qp1d(), 0, 1.0) == pytest.approx(3.0, abs=1e-8)
    assert constraint_difficulty(inactive(), 0, 1.0) == pytest.approx(0.0, abs=1e-8)
    assert constraint_difficulty(infeasible_nominal(), 0, 2.0) == math.inf
    with pytest.raises(UndefinedDifficultyError):
        constraint_difficulty(infeasible_nominal(), 0, 0.5)
    with pytest.raises(InvalidArgumentError):
        constraint_difficulty(qp1d(), 0, 0.0)
    with pytest.raises(InvalidArgumentError):
        constraint_difficulty(qp1d(), 1, 1.0)


def test_double_integrator_control_certificate():
    hp = HorizonProblem(discretize(0.0, 0.5), np.array([1.0, 1.0, 0.0, 0.0]), 3, 1e-6)
    cost = SquaredNormCost(6)
    sol = solve_cf_control(hp, cost)
    prog = condense(hp)
    # the solver's own slacks are infeasible by its feasibility residual
    s_dag = np.concatenate([sol.s_x, sol.s_u]) + 1e-5
    rng = np.random.default_rng(0)
    refs = [s_dag * a for a in np.linspace(0.8, 1.25, 10)]
    for j in range(6):
        for f in (0.8, 0.95, 1.05, 1.2):
            r = s_dag.copy()
            r[j] *= f
            refs.append(r)
    refs += list(s_dag * rng.uniform(0.9, 1.1, size=(40, 6)))
    cert = verify_compromise(prog, cost, s_dag, np.array(refs), tolerance=1e-3)
    assert cert.passed, cert.as_dict()
    assert cert.skipped < len(refs)
