"""Dense numerical kernels shared by the integrators and oracles.

Everything here works on small 1-D ``numpy`` arrays (n <= 10 or so).  The
kernels are deterministic: identical inputs give bit-identical outputs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

EPS = np.finfo(float).eps
SQRT_EPS = np.sqrt(EPS)
CBRT_EPS = np.cbrt(EPS)

Residual = Callable[[np.ndarray], np.ndarray]


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when a pivot falls below the singularity threshold."""


class NewtonError(RuntimeError):
    """Raised when damped Newton fails; ``report`` holds the last iterate."""

    def __init__(self, message: str, report: "NewtonReport"):
        super().__init__(message)
        self.report = report


@dataclass
class NewtonReport:
    root: np.ndarray
    iterations: int
    residual_norm: float
    converged: bool
    damping_events: int = 0
    history: list = field(default_factory=list)


def linear_solve(A, b) -> np.ndarray:
    """Solve ``A x = b`` by LU with partial pivoting.

    Raises
    ------
    SingularMatrixError
        If some pivot of U is below ``1e-14 * ||A||``.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"linear_solve needs a square matrix, got shape {A.shape}")
    if A.shape[0] == 0:
        return np.zeros_like(b)
    scale = np.linalg.norm(A, np.inf)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lu, piv = scipy.linalg.lu_factor(A, check_finite=True)
    pivots = np.abs(np.diag(lu))
    if scale == 0.0 or pivots.min() < 1e-14 * scale:
        raise SingularMatrixError(
            f"singular matrix: min pivot {pivots.min():.3e}, ||A|| = {scale:.3e}"
        )
    return scipy.linalg.lu_solve((lu, piv), b)


def fd_jacobian(F: Residual, x, scale: float = 1.0, f0=None, central: bool = False) -> np.ndarray:
    """Finite-difference Jacobian of ``F`` at ``x``.

    Forward differences use the step ``sqrt(eps) * (1 + |x_i|) * scale``;
    ``central=True`` switches to central differences with ``cbrt(eps)`` in
    place of ``sqrt(eps)``.  The step is rounded so that ``x_i + h`` is exact.
    """
    x = np.asarray(x, dtype=float)
    base = CBRT_EPS if central else SQRT_EPS
    if not central and f0 is None:
        f0 = np.atleast_1d(np.asarray(F(x), dtype=float))
    cols = []
    for i in range(x.size):
        hi = base * (1.0 + abs(x[i])) * scale
        xp = x.copy()
        xp[i] = x[i] + hi
        hi = xp[i] - x[i]
        if central:
            xm = x.copy()
            xm[i] = x[i] - hi
            fp = np.atleast_1d(np.asarray(F(xp), dtype=float))
            fm = np.atleast_1d(np.asarray(F(xm), dtype=float))
            cols.append((fp - fm) / (2.0 * hi))
        else:
            fp = np.atleast_1d(np.asarray(F(xp), dtype=float))
            cols.append((fp - f0) / hi)
    if not cols:
        m = 0 if f0 is None else np.size(f0)
        return np.zeros((m, 0))
    return np.column_stack(cols)


def _newton_direction(J: np.ndarray, r: np.ndarray) -> np.ndarray:
    try:
        return linear_solve(J, -r)
    except SingularMatrixError:
        shift = 1e-10 * max(np.linalg.norm(J, np.inf), 1.0)
        return linear_solve(J + shift * np.eye(J.shape[0]), -r)


def newton(
    F: Residual,
    x0,
    tol: float = 1e-12,
    max_iter: int = 50,
    jac: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    check: bool = True,
    max_halvings: int = 30,
) -> NewtonReport:
    """Damped Newton iteration for ``F(x) = 0``.

    Convergence is declared when ``max|F(x)| <= tol``.  Each iteration takes a
    full Newton step and halves it (up to ``max_halvings`` times) until the
    residual norm decreases.  The Jacobian is recomputed every iteration, by
    ``jac`` when given and forward differences otherwise.  A singular Jacobian
    gets one retry with a Tikhonov shift of ``1e-10 * ||J||``.

    With ``check=True`` (default) failure raises :class:`NewtonError`;
    otherwise a report with ``converged=False`` is returned.
    """
    x = np.array(x0, dtype=float, copy=True)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)

    def G(y):
        return np.atleast_1d(np.asarray(F(y[0] if scalar else y), dtype=float))

    def J(y, gy):
        if jac is None:
            return fd_jacobian(G, y, f0=gy)
        return np.atleast_2d(np.asarray(jac(y[0] if scalar else y), dtype=float))

    r = G(x)
    rnorm = float(np.max(np.abs(r))) if r.size else 0.0
    history = [rnorm]
    damping = 0
    it = 0
    failure = None
    while rnorm > tol:
        if it >= max_iter:
            failure = f"max_iter={max_iter} exceeded, residual {rnorm:.3e}"
            break
        if not np.all(np.isfinite(r)):
            failure = "non-finite residual"
            break
        try:
            dx = _newton_direction(J(x, r), r)
        except SingularMatrixError as exc:
            failure = f"singular Jacobian after regularization: {exc}"
            break
        t = 1.0
        for _ in range(max_halvings + 1):
            trial = x + t * dx
            rt = G(trial)
            tnorm = float(np.max(np.abs(rt)))
            if np.isfinite(tnorm) and (tnorm < rnorm or tnorm <= tol):
                break
            t *= 0.5
        else:
            failure = f"line search failed at residual {rnorm:.3e}"
            break
        if t < 1.0:
            damping += 1
        x, r, rnorm = trial, rt, tnorm
        history.append(rnorm)
        it += 1

    root = x[0] if scalar else x
    report = NewtonReport(root, it, rnorm, failure is None, damping, history)
    if failure is not None and check:
        raise NewtonError(f"Newton failed: {failure} after {it} iterations", report)
    return report


def rk4_step(f: Callable[[float, np.ndarray], np.ndarray], t: float, y, h: float) -> np.ndarray:
    """One classical Runge-Kutta step for ``y' = f(t, y)``."""
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def canonical_form(n: int) -> np.ndarray:
    """The block matrix ``[[0, I], [-I, 0]]`` of size 2n."""
    eye = np.eye(n)
    zero = np.zeros((n, n))
    return np.block([[zero, eye], [-eye, zero]])


def symplectic_defect(phase_map: Residual, x, n: Optional[int] = None) -> float:
    """``max|J^T Omega J - Omega|`` for the Jacobian ``J`` of ``phase_map`` at ``x``.

    ``x`` is a stacked phase point ``(q, p)`` of length 2n.  The Jacobian is
    taken by central differences so that maps defined through Newton solves
    still resolve the defect to ~1e-9.
    """
    x = np.asarray(x, dtype=float)
    if n is None:
        n = x.size // 2
    if x.size != 2 * n:
        raise ValueError(f"phase point of length {x.size} does not match dim n={n}")
    J = fd_jacobian(phase_map, x, central=True)
    omega = canonical_form(n)
    return float(np.max(np.abs(J.T @ omega @ J - omega)))
