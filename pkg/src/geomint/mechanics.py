"""Constrained mechanical systems and their continuous nonholonomic dynamics.

A system is a Lagrangian of mechanical type, ``L(q, v) = 1/2 v^T M(q) v - V(q)``,
together with ``m`` velocity constraints ``phi(q, v) = 0``.  On the momentum
side the equations of motion read

    dq/dt = dH/dp,    dp/dt = -dH/dq - Lambda,

where the constraint force ``Lambda = -dphi_dv^T lambda`` is fixed by requiring
that the constraint values stay constant along the flow.  Multipliers are
``lambda = -C^{-1} d`` with ``C = dphi_dv M^{-1} dphi_dv^T`` and ``d`` the
rate of change of the constraints under the unconstrained Hamiltonian flow.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from geomint.solvers import CBRT_EPS

Array = np.ndarray

FEASIBILITY_TOL = 1e-8


class MassMatrixError(ValueError):
    """The mass matrix failed a Cholesky factorization."""


class CompatibilityError(ValueError):
    """The constraint compatibility matrix is singular."""


class ConstraintWarning(UserWarning):
    """A state handed to a routine that assumes feasibility violates the constraints."""


def _vector(x, name: str) -> Array:
    arr = np.array(x, dtype=float, ndmin=1, copy=True)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries: {arr}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class TangentState:
    """Position and velocity ``(q, v)``."""

    q: Array
    v: Array

    def __post_init__(self):
        object.__setattr__(self, "q", _vector(self.q, "q"))
        object.__setattr__(self, "v", _vector(self.v, "v"))
        if self.q.shape != self.v.shape:
            raise ValueError(f"q and v lengths differ: {self.q.size} vs {self.v.size}")


@dataclass(frozen=True)
class CotangentState:
    """Position and momentum ``(q, p)``."""

    q: Array
    p: Array

    def __post_init__(self):
        object.__setattr__(self, "q", _vector(self.q, "q"))
        object.__setattr__(self, "p", _vector(self.p, "p"))
        if self.q.shape != self.p.shape:
            raise ValueError(f"q and p lengths differ: {self.q.size} vs {self.p.size}")

    def stacked(self) -> Array:
        return np.concatenate([self.q, self.p])


@dataclass(frozen=True)
class ForceCovector:
    """Multipliers ``lam`` (length m) and the force covector ``Lambda`` (length n).

    Sign convention: ``Lambda = -dphi_dv^T lam``.
    """

    lam: Array
    Lambda: Array


def _no_constraints(q, v):
    return np.zeros(0)


@dataclass(frozen=True)
class MechanicalSystem:
    """Mechanical Lagrangian plus velocity constraints.

    Parameters
    ----------
    n, m : int
        Configuration dimension and number of constraints.
    mass : callable
        ``mass(q) -> (n, n)`` symmetric positive definite matrix.
    potential, grad_potential : callable
        ``V(q)`` and its gradient.
    phi, dphi_dq, dphi_dv : callable
        Constraint values ``(m,)`` and their ``(m, n)`` partial derivatives,
        all functions of ``(q, v)``.
    constant_mass : bool
        Declares ``mass`` independent of ``q``; skips the finite-difference
        mass derivatives.
    """

    n: int
    m: int
    mass: Callable[[Array], Array]
    potential: Callable[[Array], float]
    grad_potential: Callable[[Array], Array]
    phi: Callable[[Array, Array], Array] = _no_constraints
    dphi_dq: Optional[Callable[[Array, Array], Array]] = None
    dphi_dv: Optional[Callable[[Array, Array], Array]] = None
    name: str = "system"
    constant_mass: bool = False
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.m > 0 and (self.dphi_dq is None or self.dphi_dv is None):
            raise ValueError("constrained systems need dphi_dq and dphi_dv")
        if self.m > self.n:
            raise ValueError(f"m={self.m} constraints exceed n={self.n}")

    def unconstrained(self) -> "MechanicalSystem":
        """The same Lagrangian with every constraint removed."""
        return MechanicalSystem(
            n=self.n,
            m=0,
            mass=self.mass,
            potential=self.potential,
            grad_potential=self.grad_potential,
            name=f"{self.name} (unconstrained)",
            constant_mass=self.constant_mass,
        )

    def constraint_jacobians(self, q: Array, v: Array) -> tuple[Array, Array]:
        if self.m == 0:
            return np.zeros((0, self.n)), np.zeros((0, self.n))
        B = np.asarray(self.dphi_dq(q, v), dtype=float).reshape(self.m, self.n)
        A = np.asarray(self.dphi_dv(q, v), dtype=float).reshape(self.m, self.n)
        return B, A

    def lagrangian(self, q: Array, v: Array) -> float:
        return 0.5 * float(v @ self.mass(q) @ v) - float(self.potential(q))


def _mass_factor(sys: MechanicalSystem, q: Array):
    if sys.constant_mass and "factor" in sys._cache:
        return sys._cache["factor"]
    M = np.asarray(sys.mass(q), dtype=float)
    try:
        factor = scipy.linalg.cho_factor(M, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise MassMatrixError(f"mass matrix not SPD at q={np.asarray(q).tolist()}") from exc
    if sys.constant_mass:
        sys._cache["factor"] = factor
    return factor


def mass_solve(sys: MechanicalSystem, q: Array, rhs: Array) -> Array:
    """``M(q)^{-1} rhs`` through a Cholesky factorization."""
    return scipy.linalg.cho_solve(_mass_factor(sys, q), rhs, check_finite=False)


def _velocity_sensitivity(sys: MechanicalSystem, q: Array, p: Array) -> Array:
    """Central-difference ``d(M(q)^{-1} p)/dq`` at fixed ``p``."""
    n = sys.n
    if sys.constant_mass:
        return np.zeros((n, n))
    W = np.empty((n, n))
    for i in range(n):
        hi = CBRT_EPS * (1.0 + abs(q[i]))
        qp = q.copy()
        qp[i] += hi
        qm = q.copy()
        qm[i] -= hi
        W[:, i] = (mass_solve(sys, qp, p) - mass_solve(sys, qm, p)) / (qp[i] - qm[i])
    return W


def kinetic_grad_q(sys: MechanicalSystem, q: Array, v: Array) -> Array:
    """Gradient in ``q`` of ``1/2 v^T M(q) v`` at fixed ``v`` (central differences)."""
    n = sys.n
    out = np.zeros(n)
    if sys.constant_mass:
        return out
    for i in range(n):
        hi = CBRT_EPS * (1.0 + abs(q[i]))
        qp = q.copy()
        qp[i] += hi
        qm = q.copy()
        qm[i] -= hi
        out[i] = 0.5 * v @ (sys.mass(qp) - sys.mass(qm)) @ v / (qp[i] - qm[i])
    return out


def is_feasible(sys: MechanicalSystem, q: Array, v: Array) -> bool:
    if sys.m == 0:
        return True
    res = np.asarray(sys.phi(q, v), dtype=float)
    return bool(np.max(np.abs(res)) <= FEASIBILITY_TOL * (1.0 + np.linalg.norm(v)))


def _warn_infeasible(sys: MechanicalSystem, q: Array, v: Array, where: str) -> None:
    if not is_feasible(sys, q, v):
        res = np.asarray(sys.phi(q, v), dtype=float)
        warnings.warn(
            f"{where}: state violates the constraints of {sys.name} (|phi| = {np.max(np.abs(res)):.3e})",
            ConstraintWarning,
            stacklevel=3,
        )


def legendre(sys: MechanicalSystem, s: TangentState) -> CotangentState:
    """``(q, v) -> (q, M(q) v)``."""
    _mass_factor(sys, s.q)
    return CotangentState(s.q, np.asarray(sys.mass(s.q), dtype=float) @ s.v)


def legendre_inv(sys: MechanicalSystem, s: CotangentState) -> TangentState:
    """``(q, p) -> (q, M(q)^{-1} p)``."""
    return TangentState(s.q, mass_solve(sys, s.q, s.p))


def energy(sys: MechanicalSystem, s: TangentState) -> float:
    return 0.5 * float(s.v @ np.asarray(sys.mass(s.q)) @ s.v) + float(sys.potential(s.q))


def hamiltonian(sys: MechanicalSystem, s: CotangentState) -> float:
    return 0.5 * float(s.p @ mass_solve(sys, s.q, s.p)) + float(sys.potential(s.q))


def constraint_p(sys: MechanicalSystem, s: CotangentState) -> Array:
    """Constraint values on the momentum side, ``phi(q, M(q)^{-1} p)``."""
    if sys.m == 0:
        return np.zeros(0)
    v = mass_solve(sys, s.q, s.p)
    return np.asarray(sys.phi(s.q, v), dtype=float).reshape(sys.m)


def _compat(sys: MechanicalSystem, q: Array, A: Array) -> tuple[Array, Array]:
    MinvAT = mass_solve(sys, q, A.T) if A.size else np.zeros((sys.n, 0))
    C = A @ MinvAT
    C = 0.5 * (C + C.T)
    if C.size:
        eig = np.linalg.eigvalsh(C)
        top = np.max(np.abs(eig))
        if top == 0.0 or np.min(np.abs(eig)) <= 1e-14 * top:
            raise CompatibilityError(f"compatibility condition violated at q={q.tolist()}")
    return C, MinvAT


def compat_matrix(sys: MechanicalSystem, s: TangentState) -> Array:
    """``C = dphi_dv M^{-1} dphi_dv^T`` at ``(q, v)``; symmetric and m x m."""
    if sys.m == 0:
        return np.zeros((0, 0))
    _, A = sys.constraint_jacobians(s.q, s.v)
    C, _ = _compat(sys, s.q, A)
    return C


def _dynamics(sys: MechanicalSystem, q: Array, p: Array):
    """Velocity, dH/dq, multipliers and force covector at a momentum state."""
    v = mass_solve(sys, q, p)
    W = _velocity_sensitivity(sys, q, p)
    dHdq = np.asarray(sys.grad_potential(q), dtype=float) + 0.5 * (p @ W)
    if sys.m == 0:
        return v, dHdq, np.zeros(0), np.zeros(sys.n)
    B, A = sys.constraint_jacobians(q, v)
    C, _ = _compat(sys, q, A)
    drift = B @ v + A @ (W @ v - mass_solve(sys, q, dHdq))
    lam = -np.linalg.solve(C, drift)
    return v, dHdq, lam, -(A.T @ lam)


def multiplier_force(sys: MechanicalSystem, s: TangentState, check_feasible: bool = True) -> ForceCovector:
    """Multipliers and constraint force at ``(q, v)``.

    The force keeps the constraint values constant along
    :func:`nonholonomic_field`; off the constraint set it still does so, which
    defines the extension of the flow used by the shooting oracle.
    """
    if check_feasible:
        _warn_infeasible(sys, s.q, s.v, "multiplier_force")
    p = np.asarray(sys.mass(s.q), dtype=float) @ s.v
    _, _, lam, Lam = _dynamics(sys, np.array(s.q), p)
    return ForceCovector(lam, Lam)


def field_array(sys: MechanicalSystem, y: Array) -> Array:
    """Stacked ``(dq, dp)`` for a stacked state ``y = (q, p)``; no validation."""
    n = sys.n
    q, p = y[:n], y[n:]
    v, dHdq, _, Lam = _dynamics(sys, q, p)
    return np.concatenate([v, -dHdq - Lam])


def nonholonomic_field(sys: MechanicalSystem, s: CotangentState, check_feasible: bool = True) -> tuple[Array, Array]:
    """Right-hand side ``(dq/dt, dp/dt)`` of the constrained Hamiltonian equations."""
    q, p = np.array(s.q), np.array(s.p)
    v, dHdq, _, Lam = _dynamics(sys, q, p)
    if check_feasible:
        _warn_infeasible(sys, q, v, "nonholonomic_field")
    return v, -dHdq - Lam


def hamilton_field(sys: MechanicalSystem, s: CotangentState) -> tuple[Array, Array]:
    """Plain Hamiltonian vector field, constraints ignored."""
    return nonholonomic_field(sys.unconstrained(), s)
