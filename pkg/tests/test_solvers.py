import math

import numpy as np
import pytest

from geomint.solvers import (
    NewtonError,
    SingularMatrixError,
    canonical_form,
    fd_jacobian,
    linear_solve,
    newton,
    rk4_step,
    symplectic_defect,
)


def test_newton_sqrt2():
    rep = newton(lambda x: x * x - 2.0, 1.0, tol=1e-12)
    assert rep.converged
    assert rep.iterations <= 7
    assert abs(rep.root - math.sqrt(2.0)) <= 1e-15


def test_newton_linear_one_iteration():
    A = np.array([[3.0, 1.0], [1.0, 2.0]])
    b = np.array([1.0, -1.0])
    rep = newton(lambda x: A @ x - b, np.zeros(2), tol=1e-10)
    assert rep.iterations == 1
    np.testing.assert_allclose(A @ rep.root, b, atol=1e-10)


def test_newton_damping_on_atan():
    # plain Newton from 3 diverges: |x| grows every iteration
    x = 3.0
    for _ in range(5):
        x_new = x - math.atan(x) * (1.0 + x * x)
        assert abs(x_new) > abs(x)
        x = x_new
    rep = newton(math.atan, 3.0, tol=1e-12)
    assert rep.converged and abs(rep.root) <= 1e-12
    assert rep.damping_events >= 1


def test_newton_superlinear_tail():
    F = lambda x: np.array([x[0] ** 2 + x[1] ** 2 - 1.0, np.sin(x[0]) - x[1]])
    rep = newton(F, np.array([1.0, 0.2]), tol=1e-14)
    assert len(rep.history) >= 4
    hist = [r for r in rep.history if r > 0]
    tail = [(a, b) for a, b in zip(hist, hist[1:]) if a <= 1e-4 and b > 1e-15]
    for a, b in tail:
        assert b <= 10.0 * a ** 1.5


def test_newton_failure_modes():
    with pytest.raises(NewtonError):
        newton(lambda x: x * x + 1.0, 0.5, tol=1e-12, max_iter=5)
    rep = newton(lambda x: x * x + 1.0, 0.5, tol=1e-12, max_iter=5, check=False)
    assert not rep.converged and rep.residual_norm > 1e-12


def test_newton_is_deterministic():
    F = lambda x: np.array([np.exp(x[0]) - 2.0 + x[1], x[0] * x[1] - 0.1])
    a = newton(F, [0.1, 0.1]).root
    b = newton(F, [0.1, 0.1]).root
    assert a.tobytes() == b.tobytes()


def test_fd_jacobian_affine():
    A = np.array([[1.0, -2.0, 0.5], [3.0, 0.0, 4.0]])
    J = fd_jacobian(lambda x: A @ x, np.array([0.3, -1.0, 2.0]))
    np.testing.assert_allclose(J, A, atol=1e-9)


def test_fd_jacobian_polynomial():
    J = fd_jacobian(lambda x: np.array([x[0] ** 2, x[0] * x[1]]), np.array([1.0, 2.0]))
    np.testing.assert_allclose(J, [[2.0, 0.0], [2.0, 1.0]], rtol=1e-6, atol=1e-6)


def test_fd_jacobian_sin():
    assert abs(fd_jacobian(np.sin, np.array([0.0]))[0, 0] - 1.0) <= 1e-8


def test_linear_solve_examples():
    b = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(linear_solve(np.eye(3), b), b)
    np.testing.assert_allclose(linear_solve([[2.0, 0.0], [0.0, 4.0]], [2.0, 8.0]), [1.0, 2.0])


def test_linear_solve_hilbert_residual():
    n = 4
    H = np.array([[1.0 / (i + j + 1) for j in range(n)] for i in range(n)])
    b = np.ones(n)
    x = linear_solve(H, b)
    assert np.linalg.norm(H @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_linear_solve_singular():
    with pytest.raises(SingularMatrixError):
        linear_solve([[1.0, 2.0], [2.0, 4.0]], [1.0, 1.0])


def test_rk4_step_exponential():
    y = rk4_step(lambda t, y: y, 0.0, np.array([1.0]), 0.1)
    taylor = 1 + 0.1 + 0.1 ** 2 / 2 + 0.1 ** 3 / 6 + 0.1 ** 4 / 24
    assert abs(y[0] - taylor) <= 1e-15


def test_symplectic_defect_identity_rotation_scaling():
    assert symplectic_defect(lambda x: x, np.array([0.3, -0.2])) <= 1e-10
    th = 0.7
    R = np.array([[np.cos(th), np.sin(th)], [-np.sin(th), np.cos(th)]])
    assert symplectic_defect(lambda x: R @ x, np.array([1.2, 0.4])) <= 1e-8
    # J = diag(2, 1): J^T Omega J = 2 Omega
    d = symplectic_defect(lambda x: np.array([2.0 * x[0], x[1]]), np.array([0.5, 0.5]))
    assert abs(d - 1.0) <= 1e-8


def test_canonical_form():
    np.testing.assert_array_equal(canonical_form(1), [[0.0, 1.0], [-1.0, 0.0]])
