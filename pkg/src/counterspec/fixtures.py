"""Built-in programs used by the tests and the CLI."""
import numpy as np

from .problem import ConvexProgram, QuadraticFunction


def qp1d() -> ConvexProgram:
    """min (z-2)^2 s.t. z <= s.  Compromise at s = 1 for h = s^2."""
    return ConvexProgram(QuadraticFunction([[2.0]], [-4.0], 4.0), [QuadraticFunction([[0.0]], [1.0])])


def inactive() -> ConvexProgram:
    """min z^2 s.t. z - 1 <= s; the constraint never binds."""
    return ConvexProgram(QuadraticFunction([[2.0]], [0.0]), [QuadraticFunction([[0.0]], [1.0], -1.0)])


def infeasible_nominal() -> ConvexProgram:
    """min (z-2)^2 s.t. z^2 + 1 <= s; infeasible for s < 1."""
    return ConvexProgram(QuadraticFunction([[2.0]], [-4.0], 4.0), [QuadraticFunction([[2.0]], [0.0], 1.0)])


def qp2d_box() -> ConvexProgram:
    """min ||z - (2, 1)||^2 s.t. z1 <= s1, z2 <= s2."""
    Z = np.zeros((2, 2))
    return ConvexProgram(
        QuadraticFunction(2.0 * np.eye(2), [-4.0, -2.0], 5.0),
        [QuadraticFunction(Z, [1.0, 0.0]), QuadraticFunction(Z, [0.0, 1.0])],
    )


def random_qp(seed: int) -> ConvexProgram:
    """Strongly convex 2-variable QP with 2 linear constraints.

    The unconstrained minimizer is pushed outside both half-planes so that
    relaxing either constraint buys performance.  The two constraint normals
    are at most 120 degrees apart, so every feasible set is a wedge with an
    opening of at least 60 degrees rather than a thin strip.
    """
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(2, 2))
    P = M.T @ M + 0.5 * np.eye(2)
    z_free = rng.uniform(-1.5, 1.5, size=2)
    q = -P @ z_free
    r = 0.5 * z_free @ P @ z_free
    cons = []
    normals = []
    for _ in range(2):
        while True:
            a = rng.normal(size=2)
            a /= np.linalg.norm(a)
            if not normals or a @ normals[0] >= -0.5:
                break
        normals.append(a)
        # a'z_free - b = violation > 0
        b = a @ z_free - rng.uniform(0.3, 1.5)
        cons.append(QuadraticFunction(np.zeros((2, 2)), a, -b))
    return ConvexProgram(QuadraticFunction(P, q, r), cons)


FIXTURES = {
    "qp1d": qp1d,
    "inactive": inactive,
    "infeasible": infeasible_nominal,
    "qp2d_box": qp2d_box,
}


def get_fixture(name: str, seed: int = 0) -> ConvexProgram:
    if name == "qp2d":
        return random_qp(seed)
    try:
        return FIXTURES[name]()
    except KeyError:
        raise KeyError(f"unknown fixture {name!r}; choose from {sorted(FIXTURES) + ['qp2d']}") from None
