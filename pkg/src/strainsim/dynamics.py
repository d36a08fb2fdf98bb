"""Generalized dynamics assembly by Gauss-Legendre quadrature over the rod.

The equation of motion is

    M(q) qddot + (C(q, qdot) + D) qdot + K q + F(q) = A(q) u

with u the signed tendon inputs (pulling is negative, see actuation module).
The Coriolis matrix is built so that M_dot = C + C^T holds exactly for the
discretized system, not just along the trajectory direction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import actuation as _actuation
from .errors import NumericalError
from .kinematics import BackboneStates, propagate
from .liegroup import adjoint_small, coadjoint_map
from .model import RobotModel


def cross_section_inertia(model: RobotModel, X: float) -> np.ndarray:
    """6x6 screw inertia density of the cross-section at X."""
    return np.diag(model.geometry.section_inertia_diag(float(X)))


def stiffness_matrix(model: RobotModel) -> np.ndarray:
    return model.stiffness.copy()


def damping_matrix(model: RobotModel) -> np.ndarray:
    return model.damping.copy()


def _grid_states(model: RobotModel, q, qdot=None, *, need_pose=True, need_jdot=False) -> BackboneStates:
    return propagate(
        model.dynamics_grid, q, qdot, need_pose=need_pose, need_jac=True, need_jdot=need_jdot
    )


def _weighted_gram(w, J, diag) -> np.ndarray:
    """sum_g w_g J_g^T diag_g J_g as one stacked GEMM."""
    batch = J.shape[:-3]
    G, six, n = J.shape[-3:]
    Jf = J.reshape(batch + (G * six, n))
    scaled = (J * (w[:, None] * diag)[..., None]).reshape(batch + (G * six, n))
    return np.swapaxes(Jf, -1, -2) @ scaled


def _weighted_project(w, J, vec) -> np.ndarray:
    """sum_g w_g J_g^T vec_g as one stacked GEMV."""
    batch = J.shape[:-3]
    G, six, n = J.shape[-3:]
    Jf = J.reshape(batch + (G * six, n))
    v = (vec * w[:, None]).reshape(batch + (G * six,))
    return (np.swapaxes(Jf, -1, -2) @ v[..., None])[..., 0]


def _ad_transpose_apply(a: np.ndarray, p: np.ndarray) -> np.ndarray:
    """ad_a^T p via cross products (no 6x6 intermediates)."""
    out = np.empty_like(p)
    out[..., :3] = np.cross(p[..., :3], a[..., :3]) + np.cross(p[..., 3:], a[..., 3:])
    out[..., 3:] = np.cross(p[..., 3:], a[..., :3])
    return out


def mass_matrix(model: RobotModel, q: np.ndarray, states: BackboneStates | None = None) -> np.ndarray:
    if states is None:
        states = _grid_states(model, q, need_pose=False)
    return _weighted_gram(model.dynamics_grid.weights, states.jacobian, model.inertia_at_nodes)


def gravity_vector(model: RobotModel, q: np.ndarray, states: BackboneStates | None = None) -> np.ndarray:
    """Generalized gravity force on the left side of the equation of motion."""
    if states is None:
        states = _grid_states(model, q, need_pose=True)
    w = model.dynamics_grid.weights
    g_body = np.swapaxes(states.rotations, -1, -2) @ model.gravity
    return -_weighted_project(w * model.rho_area_at_nodes, states.jacobian[..., 3:, :], g_body)


def coriolis_force(model: RobotModel, q, qdot, states: BackboneStates | None = None) -> np.ndarray:
    """C(q, qdot) qdot without forming the full matrix."""
    if states is None:
        states = _grid_states(model, q, qdot, need_pose=False)
    Mdiag = model.inertia_at_nodes
    eta = states.body_velocity
    vec = Mdiag * states.velocity_rate_geom - _ad_transpose_apply(eta, Mdiag * eta)
    return _weighted_project(model.dynamics_grid.weights, states.jacobian, vec)


def coriolis_matrix(model: RobotModel, q, qdot) -> np.ndarray:
    """Coriolis matrix with the structural identities

    C(q, qdot) qdot == coriolis_force and C + C^T == d/dt M.
    """
    states = _grid_states(model, q, qdot, need_pose=False, need_jdot=True)
    w = model.dynamics_grid.weights
    Mdiag = model.inertia_at_nodes
    J = states.jacobian
    Jd = states.jacobian_dot
    eta = states.body_velocity
    ad_eta = adjoint_small(eta)
    MJ = Mdiag[..., None] * J
    # N = M Jd - 1/2 (ad^T M - M ad) J - 1/2 Q(M eta) J
    N = Mdiag[..., None] * Jd
    N -= 0.5 * np.einsum("...gji,...gjk->...gik", ad_eta, MJ)
    N += 0.5 * Mdiag[..., None] * (ad_eta @ J)
    N -= 0.5 * coadjoint_map(Mdiag * eta) @ J
    return np.einsum("g,...gik,...gil->...kl", w, J, N, optimize=True)


def kinetic_energy(model: RobotModel, q, qdot) -> float:
    states = _grid_states(model, q, qdot, need_pose=False)
    w = model.dynamics_grid.weights
    eta = states.body_velocity
    return 0.5 * float(np.einsum("g,gi,gi,gi->", w, eta, model.inertia_at_nodes, eta))


def elastic_energy(model: RobotModel, q) -> float:
    q = np.asarray(q, dtype=float)
    return 0.5 * float(q @ model.stiffness @ q)


def gravity_potential(model: RobotModel, q) -> float:
    states = _grid_states(model, q, need_pose=True)
    w = model.dynamics_grid.weights
    return -float(np.einsum("g,g,gi,i->", w, model.rho_area_at_nodes, states.positions, model.gravity))


@dataclass(frozen=True)
class DynamicsMatrices:
    """All terms of the equation of motion evaluated at (q, qdot)."""

    M: np.ndarray
    C: np.ndarray
    D: np.ndarray
    K: np.ndarray
    F: np.ndarray
    A: np.ndarray


def assemble_matrices(model: RobotModel, q, qdot, active=None) -> DynamicsMatrices:
    states = _grid_states(model, q, qdot, need_pose=True, need_jdot=True)
    return DynamicsMatrices(
        M=mass_matrix(model, q, states),
        C=coriolis_matrix(model, q, qdot),
        D=model.damping.copy(),
        K=model.stiffness.copy(),
        F=gravity_vector(model, q, states),
        A=_actuation.actuation_matrix(model, q, active=active),
    )


def _solve_spd(M: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        cf = scipy.linalg.cho_factor(M, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise NumericalError(
            f"mass matrix not positive definite (condition estimate {np.linalg.cond(M):.3e})"
        ) from exc
    return scipy.linalg.cho_solve(cf, rhs, check_finite=False)


def generalized_force(model: RobotModel, q, qdot, u=None, active=None,
                      states: BackboneStates | None = None, A: np.ndarray | None = None) -> np.ndarray:
    """Right-hand side A u - (C + D) qdot - K q - F of the solved system.

    u is the signed input (pulling negative). Pass A to reuse an actuation
    matrix already evaluated at this same q.
    """
    if states is None:
        states = _grid_states(model, q, qdot, need_pose=True)
    rhs = -coriolis_force(model, q, qdot, states)
    rhs -= model.damping @ qdot
    rhs -= model.stiffness @ q
    rhs -= gravity_vector(model, q, states)
    if u is not None:
        u = np.asarray(u, dtype=float)
        if np.any(u != 0.0):
            if A is None:
                A = _actuation.actuation_matrix(model, q, active=active)
            rhs += A @ u
    return rhs


def forward_dynamics(model: RobotModel, q, qdot, u=None, active=None, A: np.ndarray | None = None) -> np.ndarray:
    """Solve M qddot = A u - (C + D) qdot - K q - F for qddot (u signed)."""
    q = np.asarray(q, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    states = _grid_states(model, q, qdot, need_pose=True)
    M = mass_matrix(model, q, states)
    rhs = generalized_force(model, q, qdot, u, active, states, A)
    return _solve_spd(M, rhs)


def semi_implicit_velocity(model: RobotModel, q, qdot, dt: float, u=None, active=None,
                           A: np.ndarray | None = None) -> np.ndarray:
    """New velocity of one semi-implicit Euler step.

    The constant viscous term D v is taken at the new velocity, removing
    its explicit stability limit:

        (M + dt D) v' = M v + dt (A u - C v - K q - F)
    """
    q = np.asarray(q, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    states = _grid_states(model, q, qdot, need_pose=True)
    M = mass_matrix(model, q, states)
    rhs = -coriolis_force(model, q, qdot, states)
    rhs -= model.stiffness @ q
    rhs -= gravity_vector(model, q, states)
    if u is not None:
        u = np.asarray(u, dtype=float)
        if np.any(u != 0.0):
            if A is None:
                A = _actuation.actuation_matrix(model, q, active=active)
            rhs += A @ u
    return _solve_spd(M + dt * model.damping, M @ qdot + dt * rhs)
