"""Geometric integrators for nonholonomic mechanics and regular optimal control."""

from geomint.solvers import (
    NewtonError,
    NewtonReport,
    SingularMatrixError,
    fd_jacobian,
    linear_solve,
    newton,
    rk4_step,
    symplectic_defect,
)
from geomint.mechanics import (
    CompatibilityError,
    CotangentState,
    ForceCovector,
    MechanicalSystem,
    TangentState,
    compat_matrix,
    constraint_p,
    energy,
    hamiltonian,
    legendre,
    legendre_inv,
    multiplier_force,
    nonholonomic_field,
)
from geomint.integrator import (
    DiscreteTrajectory,
    IntegratorConfig,
    IntegratorError,
    d1_action,
    d2_action,
    discrete_action,
    discrete_force,
    initialize,
    reconstruct_momentum,
    run,
    step,
    step_residual,
)
from geomint.oracle import (
    BvpSolution,
    ShootingError,
    composition_check,
    exact_action,
    exact_initial_constraint,
    force_work,
    rk4_integrate,
    shoot,
)
from geomint.control import (
    ControlSystem,
    ExtremalTrajectory,
    OcpProblem,
    RegularityError,
    compose_generating,
    eliminate_control,
    generating_value,
    oc_step,
    pontryagin_h,
    reduced_field,
    solve_ocp,
)

__version__ = "0.1.0"
