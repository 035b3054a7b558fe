"""High-accuracy reference machinery built on the continuous nonholonomic flow.

The constrained vector field is defined on all of phase space: off the
constraint set it keeps the constraint values constant rather than zero.
Two-point shooting uses this extended flow with an unrestricted initial
velocity, which makes ``(q0, q1)`` honest coordinates near the diagonal and
the exact one-step action ``S(q0, q1)`` a smooth function of both endpoints.
On feasible endpoint pairs the shots are genuine nonholonomic trajectories.

Momenta follow from the action and the work of the constraint force:

    p0 = -dS/dq0 + int Lambda . dq/dq0,     p1 = dS/dq1 - int Lambda . dq/dq1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from geomint.integrator import IntegratorConfig, step_residual
from geomint.mechanics import (
    CotangentState,
    MechanicalSystem,
    _dynamics,
    _warn_infeasible,
    constraint_p,
    field_array,
    legendre_inv,
    mass_solve,
)
from geomint.solvers import fd_jacobian, newton, rk4_step

Array = np.ndarray

DEFAULT_SUBINTERVALS = 64
QUADRATURE_TOL = 1e-9
MAX_SUBINTERVALS = 4096


class ShootingError(RuntimeError):
    """Two-point shooting failed."""


@dataclass
class BvpSolution:
    """Shot from ``q0`` to ``q1`` over a duration ``h``.

    ``times``/``qs``/``vs`` are the quadrature nodes.  The work integrals are
    filled in by :func:`force_work` and are ``None`` on a bare shot.
    """

    v0: Array
    times: Array
    qs: Array
    vs: Array
    action: float
    endpoint_error: float
    iterations: int
    work_left: Optional[Array] = None
    work_right: Optional[Array] = None

    @property
    def samples(self):
        return list(zip(self.times, self.qs, self.vs))


class CompositionResult(NamedTuple):
    q1: Array
    additivity_defect: float
    matching_defect: float


def rk4_integrate(sys: MechanicalSystem, s0: CotangentState, h: float, N: int) -> list:
    """Classical RK4 on the nonholonomic field; returns the ``N + 1`` states."""
    _warn_infeasible(sys, s0.q, legendre_inv(sys, s0).v, "rk4_integrate")
    y = s0.stacked()
    out = [s0]
    n = sys.n
    f = lambda t, x: field_array(sys, x)
    for k in range(N):
        y = rk4_step(f, k * h, y, h)
        out.append(CotangentState(y[:n], y[n:]))
    return out


def _rk4_path(sys: MechanicalSystem, q0: Array, v0: Array, h: float, nsub: int) -> Array:
    """Stacked states ``(q, p)`` at ``nsub + 1`` uniform nodes over ``[0, h]``."""
    y = np.concatenate([q0, np.asarray(sys.mass(q0), dtype=float) @ v0])
    dt = h / nsub
    f = lambda t, x: field_array(sys, x)
    path = np.empty((nsub + 1, y.size))
    path[0] = y
    for k in range(nsub):
        y = rk4_step(f, k * dt, y, dt)
        path[k + 1] = y
    return path


def _simpson(values: Array, h: float) -> Array:
    nsub = len(values) - 1
    w = np.ones(nsub + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return (h / (3.0 * nsub)) * np.tensordot(w, values, axes=1)


def _velocities(sys: MechanicalSystem, path: Array) -> Array:
    n = sys.n
    return np.array([mass_solve(sys, y[:n], y[n:]) for y in path])


def _endpoint(sys, q0, v0, h, nsub):
    return _rk4_path(sys, q0, v0, h, nsub)[-1, : sys.n]


def _solve_shot(sys, q0, q1, h, tol, nsub, seed, jac):
    def miss(v0):
        return _endpoint(sys, q0, v0, h, nsub) - q1

    # run to the round-off floor so finite differences of shot results stay clean
    floor = 4.0 * np.finfo(float).eps * (1.0 + np.max(np.abs(q1)))
    rep = newton(miss, seed, tol=floor, max_iter=30, jac=jac, check=False, max_halvings=2)
    if rep.residual_norm > tol:
        raise ShootingError(
            f"shooting failed: endpoint error {rep.residual_norm:.3e} after {rep.iterations} iterations"
        )
    return rep


def shoot(
    sys: MechanicalSystem,
    q0,
    q1,
    h: float,
    tol: float = 1e-11,
    nsub: int = DEFAULT_SUBINTERVALS,
    v_seed=None,
    jac: Optional[Array] = None,
) -> BvpSolution:
    """Trajectory of the constrained flow with ``q(0) = q0`` and ``q(h) = q1``.

    Newton on the initial velocity; the action is composite Simpson of the
    Lagrangian over ``nsub`` (even) sub-intervals.  ``jac`` fixes the
    Newton Jacobian (chord iteration), useful when re-shooting nearby targets.
    """
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    if nsub % 2:
        raise ValueError("Simpson quadrature needs an even number of sub-intervals")
    seed = (q1 - q0) / h if v_seed is None else np.asarray(v_seed, dtype=float)
    J = None if jac is None else (lambda v: jac)
    rep = _solve_shot(sys, q0, q1, h, tol, nsub, seed, J)
    return _solution(sys, q0, rep.root, h, nsub, rep.residual_norm, rep.iterations)


def _solution(sys, q0, v0, h, nsub, err, iters) -> BvpSolution:
    path = _rk4_path(sys, q0, v0, h, nsub)
    n = sys.n
    qs = path[:, :n]
    vs = _velocities(sys, path)
    lag = np.array([sys.lagrangian(q, v) for q, v in zip(qs, vs)])
    return BvpSolution(
        v0=np.array(v0), times=np.linspace(0.0, h, nsub + 1), qs=qs, vs=vs,
        action=float(_simpson(lag, h)), endpoint_error=float(err), iterations=iters,
    )


def _shot_jacobian(sys, q0, v0, h, nsub) -> Array:
    return fd_jacobian(lambda v: _endpoint(sys, q0, v, h, nsub), v0)


def _adaptive_nsub(sys, q0, q1, h, nsub=DEFAULT_SUBINTERVALS) -> tuple[BvpSolution, int]:
    """Double the sub-interval count until two successive actions agree."""
    sol = shoot(sys, q0, q1, h, nsub=nsub)
    while nsub < MAX_SUBINTERVALS:
        finer = shoot(sys, q0, q1, h, nsub=2 * nsub, v_seed=sol.v0)
        nsub *= 2
        if abs(finer.action - sol.action) <= QUADRATURE_TOL:
            return finer, nsub
        sol = finer
    return sol, nsub


def exact_action(sys: MechanicalSystem, q0, q1, h: float, nsub: Optional[int] = None) -> float:
    """One-step action along the shot from ``q0`` to ``q1``.

    With ``nsub=None`` the quadrature is refined until successive values agree
    within 1e-9.
    """
    if nsub is None:
        return _adaptive_nsub(sys, q0, q1, h)[0].action
    return shoot(sys, q0, q1, h, nsub=nsub).action


def _perturbation(x: float) -> float:
    # well above the shooting noise floor; central differences keep truncation at O(delta^2)
    return 1e-4 * (1.0 + abs(x))


def _side_sensitivity(sys, base: BvpSolution, q0, q1, h, nsub, side: str, jac) -> tuple[Array, Array]:
    """Action gradient and force work with respect to one endpoint.

    Each coordinate of the chosen endpoint is moved by +-delta and re-shot;
    the actions give the gradient, the paths give dq(t)/dx.
    """
    n = sys.n
    forces = np.array([_dynamics(sys, q, np.asarray(sys.mass(q)) @ v)[3] for q, v in zip(base.qs, base.vs)])
    grad = np.zeros(n)
    work = np.zeros(n)
    for i in range(n):
        shots, coords = [], []
        for sign in (1.0, -1.0):
            a, b = np.array(q0, dtype=float), np.array(q1, dtype=float)
            target = a if side == "left" else b
            target[i] += sign * _perturbation(target[i])
            coords.append(target[i])
            try:
                shots.append(shoot(sys, a, b, h, nsub=nsub, v_seed=base.v0, jac=jac))
            except ShootingError as exc:
                raise ShootingError(f"perturbed shot failed ({side} endpoint, index {i}): {exc}") from exc
        plus, minus = shots
        step = coords[0] - coords[1]
        grad[i] = (plus.action - minus.action) / step
        dq = (plus.qs - minus.qs) / step
        work[i] = _simpson(np.einsum("ij,ij->i", forces, dq), h)
    return grad, work


def _sensitivities(sys, q0, q1, h, nsub, sides=("left", "right")):
    base = shoot(sys, q0, q1, h, nsub=nsub)
    jac = _shot_jacobian(sys, np.asarray(q0, dtype=float), base.v0, h, nsub)
    out = {side: _side_sensitivity(sys, base, q0, q1, h, nsub, side, jac) for side in sides}
    return base, out


def force_work(sys: MechanicalSystem, q0, q1, h: float, nsub: int = DEFAULT_SUBINTERVALS) -> tuple[Array, Array]:
    """Work integrals ``int Lambda . dq/dq0`` and ``int Lambda . dq/dq1`` along the shot."""
    if sys.m == 0:
        return np.zeros(sys.n), np.zeros(sys.n)
    _, sens = _sensitivities(sys, q0, q1, h, nsub)
    return sens["left"][1], sens["right"][1]


def shot_with_work(sys: MechanicalSystem, q0, q1, h: float, nsub: int = DEFAULT_SUBINTERVALS) -> BvpSolution:
    base, sens = _sensitivities(sys, q0, q1, h, nsub)
    base.work_left = sens["left"][1]
    base.work_right = sens["right"][1]
    return base


class Momenta(NamedTuple):
    p0: Array
    p1: Array
    shot_p0: Array
    shot_p1: Array


def reconstructed_momenta(sys: MechanicalSystem, q0, q1, h: float, nsub: int = DEFAULT_SUBINTERVALS) -> Momenta:
    """Endpoint momenta from the action gradient and the force work.

    Also returns the momenta carried by the shot itself for comparison.
    """
    base, sens = _sensitivities(sys, q0, q1, h, nsub)
    (g0, w0), (g1, w1) = sens["left"], sens["right"]
    M0 = np.asarray(sys.mass(base.qs[0]))
    M1 = np.asarray(sys.mass(base.qs[-1]))
    return Momenta(-g0 + w0, g1 - w1, M0 @ base.vs[0], M1 @ base.vs[-1])


def exact_initial_constraint(sys: MechanicalSystem, q0, q1, h: float, nsub: int = DEFAULT_SUBINTERVALS) -> Array:
    """Constraint values at ``(q0, p0)`` with ``p0`` rebuilt from the action and force work."""
    if sys.m == 0:
        return np.zeros(0)
    base, sens = _sensitivities(sys, q0, q1, h, nsub, sides=("left",))
    g0, w0 = sens["left"]
    return constraint_p(sys, CotangentState(np.asarray(q0, dtype=float), -g0 + w0))


def matching_residual(sys: MechanicalSystem, q0, q1, q2, h: float, nsub: int = DEFAULT_SUBINTERVALS) -> Array:
    """``D2 S(q0, q1) + D1 S(q1, q2)`` minus the two force-work terms."""
    _, first = _sensitivities(sys, q0, q1, h, nsub, sides=("right",))
    _, second = _sensitivities(sys, q1, q2, h, nsub, sides=("left",))
    g1, w1 = first["right"]
    g0, w0 = second["left"]
    return g1 + g0 - w1 - w0


def composition_check(
    sys: MechanicalSystem, q0, q2, h: float, nsub: int = DEFAULT_SUBINTERVALS, tol: float = 1e-9
) -> CompositionResult:
    """Two-step composition of exact actions.

    Solves the matching condition for the intermediate point ``q1`` and
    returns ``|S_2h(q0, q2) - S_h(q0, q1) - S_h(q1, q2)|`` with the final
    matching residual.  The Newton Jacobian is that of the midpoint discrete
    scheme (a chord iteration); the predictor is the midpoint node of the
    two-step shot.
    """
    q0 = np.asarray(q0, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    long = shoot(sys, q0, q2, 2.0 * h, nsub=2 * nsub)
    seed = long.qs[nsub]
    cfg = IntegratorConfig(alpha=0.5, h=h)
    J = fd_jacobian(lambda x: step_residual(sys, cfg, q0, x, q2), seed, central=True)
    # the residual carries finite-difference noise; stop at its floor instead of searching below it
    rep = newton(
        lambda x: matching_residual(sys, q0, x, q2, h, nsub),
        seed, tol=tol, max_iter=20, jac=lambda x: J, check=False, max_halvings=3,
    )
    if not np.isfinite(rep.residual_norm):
        raise ShootingError("composition check failed: non-finite matching residual")
    q1 = rep.root
    split = shoot(sys, q0, q1, h, nsub=nsub).action + shoot(sys, q1, q2, h, nsub=nsub).action
    return CompositionResult(q1, abs(long.action - split), rep.residual_norm)
