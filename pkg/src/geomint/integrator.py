"""Generating-function integrators for nonholonomic systems.

The exact action over one step is replaced by

    S_alpha(q0, q1) = h L((1 - alpha) q0 + alpha q1, (q1 - q0) / h),

and the constraint force by its value at the same alpha-weighted point with
the difference-quotient velocity, split between the two endpoints with
weights ``1 - alpha`` (left) and ``alpha`` (right).  One step solves

    D2 S(q_prev, q_cur) + D1 S(q_cur, q_next)
        = alpha h Lambda(q_prev, q_cur) + (1 - alpha) h Lambda(q_cur, q_next)

for ``q_next``.  Momenta are attached to ``q_k`` through the segment ending
at ``q_k``: ``p_k = D2 S(q_{k-1}, q_k) - alpha h Lambda(q_{k-1}, q_k)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from geomint.mechanics import (
    CotangentState,
    ForceCovector,
    MechanicalSystem,
    TangentState,
    _warn_infeasible,
    constraint_p,
    hamiltonian,
    kinetic_grad_q,
    legendre_inv,
    multiplier_force,
)
from geomint.solvers import NewtonError, newton

Array = np.ndarray


class IntegratorError(RuntimeError):
    """Initialization or a step of the discrete scheme failed."""


@dataclass(frozen=True)
class IntegratorConfig:
    alpha: float = 0.5
    h: float = 0.01
    newton_tol: float = 1e-12
    newton_max_iter: int = 25

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.h > 0.0:
            raise ValueError(f"time step must be positive, got {self.h}")
        if not self.newton_tol > 0.0:
            raise ValueError(f"newton_tol must be positive, got {self.newton_tol}")
        if self.newton_max_iter < 1:
            raise ValueError("newton_max_iter must be a positive integer")


@dataclass
class DiscreteTrajectory:
    """Discrete orbit and per-point diagnostics, all indexed by step ``k``.

    ``constraint_residuals[k]`` and ``multipliers[k]`` refer to the segment
    ``(q_{k-1}, q_k)`` evaluated at its alpha-weighted point; index 0 holds the
    values at the initial state.
    """

    times: Array
    qs: Array
    ps: Array
    energies: Array
    constraint_residuals: Array
    multipliers: Array
    newton_iters: Array

    def __len__(self) -> int:
        return len(self.times)


def _segment(cfg: IntegratorConfig, q0: Array, q1: Array) -> tuple[Array, Array]:
    a = cfg.alpha
    return (1.0 - a) * q0 + a * q1, (q1 - q0) / cfg.h


def discrete_action(sys: MechanicalSystem, cfg: IntegratorConfig, q0, q1) -> float:
    q0, q1 = np.asarray(q0, dtype=float), np.asarray(q1, dtype=float)
    qa, vd = _segment(cfg, q0, q1)
    return cfg.h * sys.lagrangian(qa, vd)


def _action_partials(sys: MechanicalSystem, cfg: IntegratorConfig, q0: Array, q1: Array):
    qa, vd = _segment(cfg, q0, q1)
    Lq = kinetic_grad_q(sys, qa, vd) - np.asarray(sys.grad_potential(qa), dtype=float)
    Lv = np.asarray(sys.mass(qa), dtype=float) @ vd
    return cfg.h * Lq, Lv


def d1_action(sys: MechanicalSystem, cfg: IntegratorConfig, q0, q1) -> Array:
    """Partial derivative of :func:`discrete_action` in its first argument."""
    hLq, Lv = _action_partials(sys, cfg, np.asarray(q0, dtype=float), np.asarray(q1, dtype=float))
    return (1.0 - cfg.alpha) * hLq - Lv


def d2_action(sys: MechanicalSystem, cfg: IntegratorConfig, q0, q1) -> Array:
    """Partial derivative of :func:`discrete_action` in its second argument."""
    hLq, Lv = _action_partials(sys, cfg, np.asarray(q0, dtype=float), np.asarray(q1, dtype=float))
    return cfg.alpha * hLq + Lv


def segment_force(sys: MechanicalSystem, cfg: IntegratorConfig, qa, qb) -> ForceCovector:
    qa, qb = np.asarray(qa, dtype=float), np.asarray(qb, dtype=float)
    if sys.m == 0:
        return ForceCovector(np.zeros(0), np.zeros(sys.n))
    point, vd = _segment(cfg, qa, qb)
    return multiplier_force(sys, TangentState(point, vd), check_feasible=False)


def discrete_force(sys: MechanicalSystem, cfg: IntegratorConfig, qa, qb) -> Array:
    """Constraint force at the alpha-weighted point of ``(qa, qb)``."""
    return segment_force(sys, cfg, qa, qb).Lambda


def segment_constraint(sys: MechanicalSystem, cfg: IntegratorConfig, qa, qb) -> Array:
    """Constraint values at the alpha-weighted point with difference-quotient velocity."""
    if sys.m == 0:
        return np.zeros(0)
    point, vd = _segment(cfg, np.asarray(qa, dtype=float), np.asarray(qb, dtype=float))
    return np.asarray(sys.phi(point, vd), dtype=float).reshape(sys.m)


def step_residual(sys: MechanicalSystem, cfg: IntegratorConfig, q_prev, q_cur, q_next) -> Array:
    a, h = cfg.alpha, cfg.h
    left = d2_action(sys, cfg, q_prev, q_cur) - a * h * discrete_force(sys, cfg, q_prev, q_cur)
    right = d1_action(sys, cfg, q_cur, q_next) - (1.0 - a) * h * discrete_force(sys, cfg, q_cur, q_next)
    return left + right


def reconstruct_momentum(sys: MechanicalSystem, cfg: IntegratorConfig, q_prev, q_cur) -> Array:
    """Momentum attached to ``q_cur`` by the segment ``(q_prev, q_cur)``."""
    return d2_action(sys, cfg, q_prev, q_cur) - cfg.alpha * cfg.h * discrete_force(sys, cfg, q_prev, q_cur)


def initial_momentum(sys: MechanicalSystem, cfg: IntegratorConfig, q0, q1) -> Array:
    """Momentum attached to ``q0`` by the segment ``(q0, q1)``."""
    return -d1_action(sys, cfg, q0, q1) + (1.0 - cfg.alpha) * cfg.h * discrete_force(sys, cfg, q0, q1)


def discrete_initial_constraint(sys: MechanicalSystem, cfg: IntegratorConfig, q0, q1) -> Array:
    """Constraint values at ``(q0, initial_momentum(q0, q1))``."""
    return constraint_p(sys, CotangentState(q0, initial_momentum(sys, cfg, q0, q1)))


def _solve(F, seed, cfg: IntegratorConfig):
    return newton(F, seed, tol=cfg.newton_tol, max_iter=cfg.newton_max_iter)


def _initialize(sys, cfg, s0):
    _warn_infeasible(sys, s0.q, legendre_inv(sys, s0).v, "initialize")
    q0, p0 = np.array(s0.q), np.array(s0.p)
    seed = q0 + cfg.h * legendre_inv(sys, s0).v

    def F(q1):
        return p0 - initial_momentum(sys, cfg, q0, q1)

    try:
        return _solve(F, seed, cfg)
    except NewtonError as exc:
        rep = exc.report
        raise IntegratorError(
            f"initialization failed: residual {rep.residual_norm:.3e} after {rep.iterations} iterations"
        ) from exc


def initialize(sys: MechanicalSystem, cfg: IntegratorConfig, s0: CotangentState) -> Array:
    """Second point ``q1`` of the discrete orbit from the initial state ``(q0, p0)``."""
    return _initialize(sys, cfg, s0).root


def _step(sys, cfg, q_prev, q_cur, k):
    q_prev, q_cur = np.asarray(q_prev, dtype=float), np.asarray(q_cur, dtype=float)
    # the left segment does not depend on the unknown
    left = reconstruct_momentum(sys, cfg, q_prev, q_cur)

    def F(q_next):
        return left + d1_action(sys, cfg, q_cur, q_next) - (1.0 - cfg.alpha) * cfg.h * discrete_force(
            sys, cfg, q_cur, q_next
        )

    try:
        return _solve(F, 2.0 * q_cur - q_prev, cfg)
    except NewtonError as exc:
        raise IntegratorError(f"step failed at k={k}: {exc}") from exc
    except np.linalg.LinAlgError as exc:
        raise IntegratorError(f"step failed at k={k}: {exc}") from exc


def step(sys: MechanicalSystem, cfg: IntegratorConfig, q_prev, q_cur, k: int = 1) -> Array:
    """Solve the discrete equations for ``q_next`` given ``(q_prev, q_cur)``."""
    return _step(sys, cfg, q_prev, q_cur, k).root


def run(sys: MechanicalSystem, cfg: IntegratorConfig, s0: CotangentState, N: int) -> DiscreteTrajectory:
    """Integrate ``N`` steps from ``s0``; returns ``N + 1`` points."""
    if N < 1:
        raise ValueError(f"need at least one step, got N={N}")
    q0 = np.array(s0.q)
    rep = _initialize(sys, cfg, s0)
    qs = [q0, rep.root]
    iters = [0, rep.iterations]
    for k in range(1, N):
        rep = _step(sys, cfg, qs[k - 1], qs[k], k)
        qs.append(rep.root)
        iters.append(rep.iterations)

    v0 = legendre_inv(sys, s0).v
    ps = [np.array(s0.p)]
    residuals = [constraint_p(sys, s0)]
    mults = [multiplier_force(sys, TangentState(q0, v0), check_feasible=False).lam]
    for k in range(1, N + 1):
        force = segment_force(sys, cfg, qs[k - 1], qs[k])
        ps.append(d2_action(sys, cfg, qs[k - 1], qs[k]) - cfg.alpha * cfg.h * force.Lambda)
        residuals.append(segment_constraint(sys, cfg, qs[k - 1], qs[k]))
        mults.append(force.lam)
    energies = [hamiltonian(sys, CotangentState(q, p)) for q, p in zip(qs, ps)]
    return DiscreteTrajectory(
        times=cfg.h * np.arange(N + 1),
        qs=np.array(qs),
        ps=np.array(ps),
        energies=np.array(energies),
        constraint_residuals=np.array(residuals).reshape(N + 1, sys.m),
        multipliers=np.array(mults).reshape(N + 1, sys.m),
        newton_iters=np.array(iters, dtype=int),
    )
