import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from geomint import systems
from geomint.control import (
    OcpError,
    OcpProblem,
    RegularityError,
    compose_generating,
    control_jacobian_check,
    eliminate_control,
    generating_value,
    is_minimizing,
    iterate_steps,
    oc_step,
    pontryagin_h,
    reduced_field,
    solve_ocp,
)
from geomint.solvers import fd_jacobian, rk4_step, symplectic_defect

finite = st.floats(-3.0, 3.0, allow_nan=False)


def step_map(cs, h):
    def F(x):
        qn, pn, _ = oc_step(cs, h, x[: cs.n], x[cs.n:])
        return np.concatenate([qn, pn])

    return F


def test_pontryagin_h_lqr(lqr):
    assert pontryagin_h(lqr, 1.0, 2.0, 3.0) == 11.0
    assert pontryagin_h(lqr, 0.7, 0.0, 0.0) == pytest.approx(0.5 * 0.49, abs=1e-16)


@given(finite, finite, finite, finite)
def test_pontryagin_h_affine_in_p(q, p1, p2, u):
    cs = systems.pendulum_control()
    val = pontryagin_h(cs, q, p1 + p2, u) - pontryagin_h(cs, q, p1, u) - pontryagin_h(cs, q, p2, u)
    assert abs(val + pontryagin_h(cs, q, 0.0, u)) <= 1e-12


@given(finite, finite)
def test_eliminate_control_lqr(q, p):
    u = eliminate_control(systems.lqr(), q, p)
    assert abs(u[0] + p) <= 1e-12


def test_eliminate_control_quadratic_against_grid(rng):
    B = np.array([[1.0, 0.5], [0.0, 1.0], [0.3, -0.2]])
    R = np.array([[2.0, 0.3], [0.3, 1.0]])
    cs = systems.quadratic_control(B, R)
    grid = np.linspace(-2.0, 2.0, 401)
    U1, U2 = np.meshgrid(grid, grid, indexing="ij")
    for _ in range(3):
        q, p = rng.normal(size=3), 0.5 * rng.normal(size=3)
        u = eliminate_control(cs, q, p)
        np.testing.assert_allclose(u, -np.linalg.solve(R, B.T @ p), atol=1e-12)
        # brute force: H is p.Bu + u^T R u / 2 up to a u-independent term
        g = B.T @ p
        Hgrid = g[0] * U1 + g[1] * U2 + 0.5 * (R[0, 0] * U1 ** 2 + 2 * R[0, 1] * U1 * U2 + R[1, 1] * U2 ** 2)
        i, j = np.unravel_index(np.argmin(Hgrid), Hgrid.shape)
        assert np.max(np.abs(u - [grid[i], grid[j]])) <= 0.01
        assert is_minimizing(cs, q, p, u)


def test_eliminate_control_zero_costate(pendulum):
    assert np.all(eliminate_control(pendulum, 0.4, 0.0) == 0.0)


def test_regularity_failure():
    cs = systems.quadratic_control(np.eye(2), np.diag([1.0, 0.0]))
    with pytest.raises(RegularityError, match="regular case"):
        eliminate_control(cs, [0.0, 0.0], [1.0, 1.0])
    with pytest.raises(RegularityError):
        oc_step(cs, 0.1, [0.0, 0.0], [1.0, 1.0])


def test_reduced_field_lqr(lqr):
    dq, dp = reduced_field(lqr, 1.0, 0.0)
    assert dq[0] == 0.0 and dp[0] == -1.0
    dq, dp = reduced_field(lqr, 0.0, 1.0)
    assert dq[0] == -1.0 and dp[0] == 0.0


def test_reduced_field_conserves_h(pendulum, rng):
    def Hbar(y):
        return pontryagin_h(pendulum, y[:1], y[1:], eliminate_control(pendulum, y[:1], y[1:]))

    for _ in range(5):
        y = rng.normal(size=2)
        dq, dp = reduced_field(pendulum, y[:1], y[1:])
        f = np.concatenate([dq, dp])
        eps = 1e-5
        rate = (Hbar(y + eps * f) - Hbar(y - eps * f)) / (2 * eps)
        assert abs(rate) <= 1e-8


def test_oc_step_hand_values(lqr):
    q, p, u = oc_step(lqr, 0.1, 1.0, 0.0)
    assert p[0] == pytest.approx(-0.1, abs=1e-14)
    assert q[0] == pytest.approx(1.01, abs=1e-14)
    assert u[0] == pytest.approx(0.1, abs=1e-14)


def test_oc_step_zero_step_is_identity(pendulum):
    q, p, _ = oc_step(pendulum, 0.0, 0.8, -0.3)
    assert q[0] == 0.8 and p[0] == -0.3


def test_oc_step_fixed_point():
    # no dynamics and a q-independent cost
    cs = systems.quadratic_control(np.zeros((2, 1)), [[1.0]])
    q, p, _ = oc_step(cs, 0.2, [0.4, -1.0], [0.7, 0.1])
    np.testing.assert_array_equal(q, [0.4, -1.0])
    np.testing.assert_array_equal(p, [0.7, 0.1])


def test_generating_value_hand(lqr):
    assert generating_value(lqr, 0.1, 1.0, -0.1) == pytest.approx(-0.0505, abs=1e-15)
    assert generating_value(lqr, 0.0, 1.5, -0.4) == pytest.approx(-0.6, abs=1e-15)


@pytest.mark.parametrize("name", ["lqr", "pendulum-control"])
def test_generating_partials_reproduce_step(name, rng):
    cs = systems.CONTROL[name]()
    h = 0.1
    for _ in range(10):
        q_k, p_k = rng.uniform(-2, 2, size=1), rng.uniform(-2, 2, size=1)
        q_next, p_next, _ = oc_step(cs, h, q_k, p_k)
        dq = fd_jacobian(lambda x: [generating_value(cs, h, x, p_next)], q_k, central=True)[0]
        dp = fd_jacobian(lambda x: [generating_value(cs, h, q_k, x)], p_next, central=True)[0]
        assert np.max(np.abs(dq - p_k)) <= 1e-6
        assert np.max(np.abs(dp - q_next)) <= 1e-6


def test_envelope_property(pendulum, rng):
    h = 0.1
    for _ in range(10):
        q, p = rng.uniform(-2, 2, size=1), rng.uniform(-2, 2, size=1)
        u = eliminate_control(pendulum, q, p)
        # u held fixed: h dL/dq + p (1 + h dGamma/dq)
        frozen = h * np.sin(q) + p
        through = fd_jacobian(lambda x: [generating_value(pendulum, h, x, p)], q, central=True)[0]
        assert np.max(np.abs(frozen - through)) <= 1e-6
        assert abs(u[0] + p[0]) <= 1e-12


def test_compose_one_step_is_generating_value(pendulum):
    comp = compose_generating(pendulum, 0.1, 1, [0.3], [-0.2])
    assert comp.value == pytest.approx(generating_value(pendulum, 0.1, [0.3], [-0.2]), abs=1e-14)


def test_compose_two_step_stationarity(lqr):
    h = 0.1
    comp = compose_generating(lqr, h, 2, [1.0], [-0.4])
    q0, q1, p1, p2 = 1.0, comp.qs[0, 0], comp.ps[1, 0], -0.4
    # S2 = h q^2/2 - h p^2/2 + p q for the scalar problem
    assert abs((q0 - h * p1) - q1) <= 1e-10
    assert abs((h * q1 + p2) - p1) <= 1e-10


def test_compose_matches_iteration(lqr, pendulum, rng):
    h, N = 0.1, 4
    for cs, tol in [(lqr, 1e-10), (pendulum, 1e-9)]:
        for _ in range(5):
            q0, p0 = rng.uniform(-1, 1, size=1), rng.uniform(-1, 1, size=1)
            qs, ps, _ = iterate_steps(cs, h, N, q0, p0)
            comp = compose_generating(cs, h, N, q0, ps[-1])
            assert np.max(np.abs(comp.qs - qs[1:])) <= tol
            assert np.max(np.abs(comp.ps - ps[:-1])) <= tol


def test_compose_partials(pendulum):
    h, N, q0, pN = 0.1, 3, np.array([0.5]), np.array([0.2])
    comp = compose_generating(pendulum, h, N, q0, pN)
    dq = fd_jacobian(lambda x: [compose_generating(pendulum, h, N, x, pN).value], q0, central=True)[0]
    dp = fd_jacobian(lambda x: [compose_generating(pendulum, h, N, q0, x).value], pN, central=True)[0]
    assert abs(dq[0] - comp.ps[0, 0]) <= 1e-6
    assert abs(dp[0] - comp.qs[-1, 0]) <= 1e-6


def test_solve_ocp_lqr():
    sol = solve_ocp(OcpProblem(systems.lqr(), np.array([1.0]), np.array([0.0]), 1.0, 20))
    assert abs(sol.qs[-1, 0]) <= 1e-8
    assert sol.qs.shape == (21, 1) and sol.us.shape == (20, 1)
    assert sol.minimizing and sol.symplectic_defect <= 1e-6
    t = np.linspace(0, 1, 21)
    assert np.max(np.abs(sol.qs[:, 0] - np.sinh(1 - t) / np.sinh(1))) <= 0.02


def test_solve_ocp_rest_has_zero_controls():
    cs = systems.lqr(qw=0.0)
    sol = solve_ocp(OcpProblem(cs, np.array([0.6]), np.array([0.6]), 1.0, 10))
    assert np.max(np.abs(sol.us)) <= 1e-10
    assert sol.cost_J <= 1e-20


def test_solve_ocp_single_step():
    sol = solve_ocp(OcpProblem(systems.lqr(), np.array([1.0]), np.array([0.5]), 0.5, 1))
    assert abs(sol.qs[-1, 0] - 0.5) <= 1e-8
    with pytest.raises(OcpError, match="best residual"):
        solve_ocp(OcpProblem(systems.lqr(b=0.0), np.array([1.0]), np.array([0.0]), 0.1, 1))


def test_ocp_problem_validation(lqr):
    with pytest.raises(ValueError):
        OcpProblem(lqr, np.zeros(1), np.zeros(1), 1.0, 0)
    with pytest.raises(ValueError):
        OcpProblem(lqr, np.zeros(1), np.zeros(1), -1.0, 4)
    assert OcpProblem(lqr, np.zeros(1), np.zeros(1), 1.0, 4).h == 0.25


@pytest.mark.parametrize("name", ["lqr", "pendulum-control"])
def test_oc_step_symplectic(name, rng):
    cs = systems.CONTROL[name]()
    F = step_map(cs, 0.1)
    worst = max(symplectic_defect(F, rng.uniform(-2, 2, size=2)) for _ in range(20))
    assert worst <= 1e-6


def test_rk4_defect_exceeds_oc_step(pendulum):
    h = 0.1

    def f(t, y):
        return np.concatenate(reduced_field(pendulum, y[:1], y[1:]))

    for x in ([0.5, 0.3], [2.0, -1.0], [np.pi + 0.5, 0.0]):
        x = np.array(x)
        d_rk = symplectic_defect(lambda y: rk4_step(f, 0.0, y, h), x)
        d_oc = symplectic_defect(step_map(pendulum, h), x)
        assert d_rk >= 10 * d_oc


def test_hamiltonian_conservation_without_secular_growth(pendulum):
    h = 0.1
    N = int(round(10 / h))
    qs, ps, _ = iterate_steps(pendulum, h, N, [np.pi + 0.5], [0.0])
    H = np.array([pontryagin_h(pendulum, q, p, eliminate_control(pendulum, q, p)) for q, p in zip(qs, ps)])
    dev = np.abs(H - H[0])
    t = h * np.arange(N + 1)
    slope = np.polyfit(t, dev, 1)[0]
    assert dev.max() <= 0.1
    assert abs(slope) * t[-1] <= 0.1 * dev.max()


def test_explicit_euler_shows_secular_growth():
    # contrast for the test above: same reduced dynamics, non-symplectic map
    h, N = 0.1, 100
    q, p, E = np.pi + 0.5, 0.0, []
    for _ in range(N + 1):
        E.append(1 - np.cos(q) - 0.5 * p * p)
        q, p = q - h * p, p - h * np.sin(q)
    dev = np.abs(np.array(E) - E[0])
    slope = np.polyfit(h * np.arange(N + 1), dev, 1)[0]
    assert abs(slope) * h * N > 0.1 * dev.max()


@settings(max_examples=20, deadline=None)
@given(finite, finite)
def test_control_jacobians(q, u):
    assert control_jacobian_check(systems.pendulum_control(), q, u)
    assert control_jacobian_check(systems.lqr(a=0.3, b=2.0), q, u)
