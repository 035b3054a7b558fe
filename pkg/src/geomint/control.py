"""Regular optimal control through Pontryagin's principle.

The control Hamiltonian is ``H(q, p, u) = L(q, u) + p . Gamma(q, u)``.  In the
regular case (``d2H/du2`` invertible) the stationarity condition ``dH/du = 0``
is solved for ``u = u_bar(q, p)`` and the remaining Hamiltonian system on
``(q, p)`` is integrated with the symplectic map generated by

    S2(q_k, p_next) = h L(q_k, u_bar) + p_next . (q_k + h Gamma(q_k, u_bar)),
    u_bar = u_bar(q_k, p_next),

i.e. ``p_k = dS2/dq`` and ``q_next = dS2/dp``.  Costate equations use
``dp/dt = -dH/dq``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from geomint.solvers import NewtonError, SingularMatrixError, fd_jacobian, linear_solve, newton, symplectic_defect

Array = np.ndarray


class RegularityError(ValueError):
    """``d2H/du2`` is singular: the problem is not regular."""


class OcpError(RuntimeError):
    """A Newton solve inside the optimal-control layer failed."""


@dataclass(frozen=True)
class ControlSystem:
    """Controlled dynamics ``q' = gamma(q, u)`` with running cost ``cost(q, u)``.

    All derivative callbacks take the same arguments as their primals;
    ``d2H_du2`` takes ``(q, p, u)``.
    """

    n: int
    mc: int
    gamma: Callable[[Array, Array], Array]
    dgamma_dq: Callable[[Array, Array], Array]
    dgamma_du: Callable[[Array, Array], Array]
    cost: Callable[[Array, Array], float]
    dcost_dq: Callable[[Array, Array], Array]
    dcost_du: Callable[[Array, Array], Array]
    d2H_du2: Callable[[Array, Array, Array], Array]
    name: str = "control-system"


@dataclass(frozen=True)
class OcpProblem:
    system: ControlSystem
    q0: Array
    qF: Array
    T: float
    N: int

    def __post_init__(self):
        if self.N < 1:
            raise ValueError(f"N must be at least 1, got {self.N}")
        if not self.T > 0:
            raise ValueError(f"horizon must be positive, got {self.T}")

    @property
    def h(self) -> float:
        return self.T / self.N


@dataclass
class ExtremalTrajectory:
    qs: Array
    ps: Array
    us: Array
    cost_J: float
    symplectic_defect: float
    minimizing: bool
    boundary_residual: float
    iterations: int


class ComposedGenerating(NamedTuple):
    value: float
    qs: Array  # q_1 .. q_N
    ps: Array  # p_0 .. p_{N-1}


def _vec(x) -> Array:
    return np.atleast_1d(np.asarray(x, dtype=float))


def pontryagin_h(cs: ControlSystem, q, p, u) -> float:
    q, p, u = _vec(q), _vec(p), _vec(u)
    return float(cs.cost(q, u)) + float(p @ _vec(cs.gamma(q, u)))


def dH_du(cs: ControlSystem, q: Array, p: Array, u: Array) -> Array:
    return _vec(cs.dcost_du(q, u)) + np.atleast_2d(cs.dgamma_du(q, u)).T @ p


def dH_dq(cs: ControlSystem, q: Array, p: Array, u: Array) -> Array:
    return _vec(cs.dcost_dq(q, u)) + np.atleast_2d(cs.dgamma_dq(q, u)).T @ p


def _control_hessian(cs: ControlSystem, q: Array, p: Array, u: Array) -> Array:
    Huu = np.atleast_2d(np.asarray(cs.d2H_du2(q, p, u), dtype=float))
    try:
        linear_solve(Huu, np.zeros(cs.mc))
    except SingularMatrixError as exc:
        raise RegularityError(
            "regularity failure: problem is not in the regular case P0 = Pf "
            "(d2H/du2 singular); general presymplectic algorithm out of scope"
        ) from exc
    return Huu


def eliminate_control(cs: ControlSystem, q, p, u_seed=None, tol: float = 1e-12) -> Array:
    """Solve ``dH/du(q, p, u) = 0`` for ``u`` by Newton from ``u_seed`` (default 0)."""
    q, p = _vec(q), _vec(p)
    u0 = np.zeros(cs.mc) if u_seed is None else _vec(u_seed)
    _control_hessian(cs, q, p, u0)
    try:
        rep = newton(
            lambda u: dH_du(cs, q, p, u),
            u0,
            tol=tol,
            max_iter=50,
            jac=lambda u: _control_hessian(cs, q, p, u),
        )
    except NewtonError as exc:
        raise OcpError(f"control elimination failed: {exc}") from exc
    return rep.root


def is_minimizing(cs: ControlSystem, q, p, u) -> bool:
    """Whether ``d2H/du2`` is positive definite at ``u``."""
    Huu = np.atleast_2d(np.asarray(cs.d2H_du2(_vec(q), _vec(p), _vec(u)), dtype=float))
    return bool(np.all(np.linalg.eigvalsh(0.5 * (Huu + Huu.T)) > 0.0))


def reduced_field(cs: ControlSystem, q, p, u_seed=None) -> tuple[Array, Array]:
    """``(dq/dt, dp/dt)`` of the Hamiltonian with the control eliminated."""
    q, p = _vec(q), _vec(p)
    u = eliminate_control(cs, q, p, u_seed)
    return _vec(cs.gamma(q, u)), -dH_dq(cs, q, p, u)


def oc_step(cs: ControlSystem, h: float, q_k, p_k, u_seed=None, tol: float = 1e-12):
    """One step of the symplectic control integrator.

    Solves ``p_k = p_next + h dH/dq(q_k, p_next, u_bar)`` for ``p_next`` and
    sets ``q_next = q_k + h gamma(q_k, u_bar)`` with ``u_bar = u_bar(q_k, p_next)``.

    Returns
    -------
    q_next, p_next, u_used
    """
    q_k, p_k = _vec(q_k), _vec(p_k)

    def G(p_next):
        u = eliminate_control(cs, q_k, p_next, u_seed)
        return p_next + h * dH_dq(cs, q_k, p_next, u) - p_k

    try:
        p_next = newton(G, p_k, tol=tol, max_iter=50).root
    except NewtonError as exc:
        raise OcpError(f"costate update failed: {exc}") from exc
    u = eliminate_control(cs, q_k, p_next, u_seed)
    q_next = q_k + h * _vec(cs.gamma(q_k, u))
    return q_next, p_next, u


def generating_value(cs: ControlSystem, h: float, q_k, p_next, u_seed=None) -> float:
    """``S2(q_k, p_next)``; its partials are ``(p_k, q_next)`` of :func:`oc_step`."""
    q_k, p_next = _vec(q_k), _vec(p_next)
    u = eliminate_control(cs, q_k, p_next, u_seed)
    return h * float(cs.cost(q_k, u)) + float(p_next @ (q_k + h * _vec(cs.gamma(q_k, u))))


def iterate_steps(cs: ControlSystem, h: float, N: int, q0, p0):
    """Iterate :func:`oc_step` ``N`` times, continuing the control seed."""
    qs, ps, us = [_vec(q0)], [_vec(p0)], []
    u = None
    for _ in range(N):
        qn, pn, u = oc_step(cs, h, qs[-1], ps[-1], u_seed=u)
        qs.append(qn)
        ps.append(pn)
        us.append(u)
    return np.array(qs), np.array(ps), np.array(us).reshape(N, cs.mc)


def compose_generating(cs: ControlSystem, h: float, N: int, q_0, p_N, tol: float = 1e-13) -> ComposedGenerating:
    """Second-kind generating function of the ``N``-step map at ``(q_0, p_N)``.

    The interior points are the stationary points of
    ``sum_k S2(q_k, p_{k+1}) - sum_{k=1}^{N-1} q_k . p_k``; the value's
    partials in ``(q_0, p_N)`` are ``(p_0, q_N)``.
    """
    q_0, p_N = _vec(q_0), _vec(p_N)

    def miss(p0):
        return iterate_steps(cs, h, N, q_0, p0)[1][-1] - p_N

    try:
        p0 = newton(miss, p_N, tol=tol, max_iter=50).root
    except NewtonError as exc:
        raise OcpError(f"generating-function sweep failed: {exc}") from exc
    qs, ps, _ = iterate_steps(cs, h, N, q_0, p0)
    ps = ps.copy()
    ps[-1] = p_N
    value = sum(generating_value(cs, h, qs[k], ps[k + 1]) for k in range(N))
    value -= sum(float(qs[k] @ ps[k]) for k in range(1, N))
    return ComposedGenerating(float(value), qs[1:], ps[:-1])


def solve_ocp(prob: OcpProblem, tol: float = 1e-10, max_iter: int = 50, p0_seed=None) -> ExtremalTrajectory:
    """Discrete extremal from ``q0`` to ``qF`` by Newton shooting on the initial costate."""
    cs, h, N = prob.system, prob.h, prob.N
    q0, qF = _vec(prob.q0), _vec(prob.qF)

    def miss(p0):
        return iterate_steps(cs, h, N, q0, p0)[0][-1] - qF

    seed = np.zeros(cs.n) if p0_seed is None else _vec(p0_seed)
    rep = newton(miss, seed, tol=tol, max_iter=max_iter, check=False)
    if not rep.converged:
        raise OcpError(
            f"shooting did not converge: best residual {rep.residual_norm:.3e} after {rep.iterations} iterations"
        )
    qs, ps, us = iterate_steps(cs, h, N, q0, rep.root)
    cost = sum(h * float(cs.cost(qs[k], us[k])) for k in range(N))

    def flow(x):
        qn, pn, _ = iterate_steps(cs, h, N, x[: cs.n], x[cs.n:])
        return np.concatenate([qn[-1], pn[-1]])

    defect = symplectic_defect(flow, np.concatenate([q0, ps[0]]), cs.n)
    minimizing = all(is_minimizing(cs, qs[k], ps[k + 1], us[k]) for k in range(N))
    return ExtremalTrajectory(
        qs=qs, ps=ps, us=us, cost_J=cost, symplectic_defect=defect,
        minimizing=minimizing, boundary_residual=rep.residual_norm, iterations=rep.iterations,
    )


def control_jacobian_check(cs: ControlSystem, q, u, rtol: float = 1e-6) -> bool:
    """Compare the derivative callbacks with central differences of their primals."""
    q, u = _vec(q), _vec(u)
    pairs = [
        (cs.dgamma_dq(q, u), fd_jacobian(lambda x: cs.gamma(x, u), q, central=True)),
        (cs.dgamma_du(q, u), fd_jacobian(lambda x: cs.gamma(q, x), u, central=True)),
        (cs.dcost_dq(q, u), fd_jacobian(lambda x: cs.cost(x, u), q, central=True)[0]),
        (cs.dcost_du(q, u), fd_jacobian(lambda x: cs.cost(q, x), u, central=True)[0]),
    ]
    return all(
        np.allclose(np.asarray(a, dtype=float).reshape(np.shape(b)), b, rtol=rtol, atol=rtol) for a, b in pairs
    )
