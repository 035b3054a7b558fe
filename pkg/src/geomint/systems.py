"""Built-in catalog of mechanical and optimal-control test systems."""

from __future__ import annotations

import numpy as np

from geomint.control import ControlSystem
from geomint.mechanics import MechanicalSystem


def nonholonomic_particle() -> MechanicalSystem:
    """Particle in R^3 with ``L = |v|^2/2 - (x^2 + y^2)`` and ``z' - y x' = 0``."""

    def mass(q):
        return np.eye(3)

    def potential(q):
        return q[0] ** 2 + q[1] ** 2

    def grad_potential(q):
        return np.array([2.0 * q[0], 2.0 * q[1], 0.0])

    def phi(q, v):
        return np.array([v[2] - q[1] * v[0]])

    def dphi_dq(q, v):
        return np.array([[0.0, -v[0], 0.0]])

    def dphi_dv(q, v):
        return np.array([[-q[1], 0.0, 1.0]])

    return MechanicalSystem(
        n=3, m=1, mass=mass, potential=potential, grad_potential=grad_potential,
        phi=phi, dphi_dq=dphi_dq, dphi_dv=dphi_dv,
        name="nonholonomic-particle", constant_mass=True,
    )


def free_particle(n: int = 1) -> MechanicalSystem:
    eye = np.eye(n)
    return MechanicalSystem(
        n=n, m=0, mass=lambda q: eye, potential=lambda q: 0.0,
        grad_potential=lambda q: np.zeros(n), name="free-particle", constant_mass=True,
    )


def oscillator(n: int = 1, stiffness: float = 1.0) -> MechanicalSystem:
    """Isotropic harmonic oscillator ``V = k |q|^2 / 2`` with unit mass."""
    eye = np.eye(n)
    return MechanicalSystem(
        n=n, m=0, mass=lambda q: eye,
        potential=lambda q: 0.5 * stiffness * float(q @ q),
        grad_potential=lambda q: stiffness * np.asarray(q, dtype=float),
        name="oscillator", constant_mass=True,
    )


def diagonal_mass(diag) -> MechanicalSystem:
    """Free motion with a constant diagonal mass matrix."""
    d = np.asarray(diag, dtype=float)
    M = np.diag(d)
    return MechanicalSystem(
        n=d.size, m=0, mass=lambda q: M, potential=lambda q: 0.0,
        grad_potential=lambda q: np.zeros(d.size), name="diagonal-mass", constant_mass=True,
    )


def bead() -> MechanicalSystem:
    """Planar system with ``M(q) = diag(1 + q1^2, 1)``, ``V = |q|^2/2`` and ``v2 - q1 v1 = 0``.

    The only built-in whose mass depends on position.
    """

    def mass(q):
        return np.diag([1.0 + q[0] ** 2, 1.0])

    def phi(q, v):
        return np.array([v[1] - q[0] * v[0]])

    def dphi_dq(q, v):
        return np.array([[-v[0], 0.0]])

    def dphi_dv(q, v):
        return np.array([[-q[0], 1.0]])

    return MechanicalSystem(
        n=2, m=1, mass=mass,
        potential=lambda q: 0.5 * float(q @ q),
        grad_potential=lambda q: np.asarray(q, dtype=float).copy(),
        phi=phi, dphi_dq=dphi_dq, dphi_dv=dphi_dv, name="bead",
    )


def lqr(a: float = 0.0, b: float = 1.0, qw: float = 1.0, r: float = 1.0) -> ControlSystem:
    """Scalar linear-quadratic problem ``q' = a q + b u``, cost ``(qw q^2 + r u^2)/2``."""
    return ControlSystem(
        n=1, mc=1,
        gamma=lambda q, u: np.array([a * q[0] + b * u[0]]),
        dgamma_dq=lambda q, u: np.array([[a]]),
        dgamma_du=lambda q, u: np.array([[b]]),
        cost=lambda q, u: 0.5 * (qw * q[0] ** 2 + r * u[0] ** 2),
        dcost_dq=lambda q, u: np.array([qw * q[0]]),
        dcost_du=lambda q, u: np.array([r * u[0]]),
        d2H_du2=lambda q, p, u: np.array([[r]]),
        name="lqr",
    )


def quadratic_control(B, R, Qw=None) -> ControlSystem:
    """``q' = B u`` with cost ``(q^T Qw q + u^T R u)/2``."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n, mc = B.shape
    Qw = np.zeros((n, n)) if Qw is None else np.atleast_2d(np.asarray(Qw, dtype=float))
    return ControlSystem(
        n=n, mc=mc,
        gamma=lambda q, u: B @ u,
        dgamma_dq=lambda q, u: np.zeros((n, n)),
        dgamma_du=lambda q, u: B,
        cost=lambda q, u: 0.5 * float(q @ Qw @ q + u @ R @ u),
        dcost_dq=lambda q, u: Qw @ q,
        dcost_du=lambda q, u: R @ u,
        d2H_du2=lambda q, p, u: R,
        name="quadratic-control",
    )


def pendulum_control() -> ControlSystem:
    """``q' = u`` with cost ``u^2/2 + (1 - cos q)``."""
    return ControlSystem(
        n=1, mc=1,
        gamma=lambda q, u: np.array([u[0]]),
        dgamma_dq=lambda q, u: np.array([[0.0]]),
        dgamma_du=lambda q, u: np.array([[1.0]]),
        cost=lambda q, u: 0.5 * u[0] ** 2 + 1.0 - np.cos(q[0]),
        dcost_dq=lambda q, u: np.array([np.sin(q[0])]),
        dcost_du=lambda q, u: np.array([u[0]]),
        d2H_du2=lambda q, p, u: np.array([[1.0]]),
        name="pendulum-control",
    )


MECHANICAL = {
    "nonholonomic-particle": nonholonomic_particle,
    "free-particle": free_particle,
    "oscillator": oscillator,
    "bead": bead,
}

CONTROL = {
    "lqr": lqr,
    "pendulum-control": pendulum_control,
}

CATALOG = tuple(MECHANICAL) + tuple(CONTROL)
