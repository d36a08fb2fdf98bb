"""Collocated coordinate change theta = h(q) and the partitioned dynamics.

theta stacks the actuation coordinates on top of the last n - n_a
generalized coordinates, with velocity map theta_dot = J_h qdot and

    J_h = [ A(q)^T ]
          [ 0    I ]

The congruence transform of the equation of motion by J_h^-1 turns the
input matrix into [I; 0] exactly: each actuator input enters one equation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import actuation as _actuation
from . import dynamics as _dynamics
from .errors import SingularityError
from .model import RobotModel

COND_LIMIT = 1e10


@dataclass(frozen=True)
class CollocatedTransform:
    """J_h, its inverse and conditioning at one configuration."""

    matrix: np.ndarray  # (..., n, n)
    inverse: np.ndarray  # (..., n, n)
    cond: float | np.ndarray
    n_active: int


def jacobian_h(model: RobotModel, q, active=None, A: np.ndarray | None = None) -> CollocatedTransform:
    """Velocity map between q and the collocated coordinates."""
    q = np.asarray(q, dtype=float)
    if A is None:
        A = _actuation.actuation_matrix(model, q, active=active)
    na = A.shape[-1]
    n = model.n
    Jh = np.zeros(q.shape[:-1] + (n, n))
    Jh[..., :na, :] = np.swapaxes(A, -1, -2)
    Jh[..., na:, na:] = np.eye(n - na)
    sv = np.linalg.svd(Jh, compute_uv=False)
    cond = sv[..., 0] / sv[..., -1]
    if np.any(~np.isfinite(cond)) or np.any(cond > COND_LIMIT):
        raise SingularityError(
            f"collocated transform near-singular (condition {np.max(cond):.3e}); "
            "actuation degeneracy at this configuration"
        )
    inverse = np.linalg.solve(Jh, np.broadcast_to(np.eye(n), Jh.shape).copy())
    return CollocatedTransform(Jh, inverse, cond, na)


def theta_coordinates(model: RobotModel, q, active=None) -> np.ndarray:
    """theta = (theta_a, theta_u) = (actuation coordinates, trailing q's)."""
    q = np.asarray(q, dtype=float)
    theta_a = _actuation.actuation_coordinates(model, q, active=active)
    na = theta_a.shape[-1]
    return np.concatenate([theta_a, q[..., na:]], axis=-1)


def transformed_forces(model: RobotModel, q, active=None, transform: CollocatedTransform | None = None) -> np.ndarray:
    """Elastic + gravity force vector in collocated coordinates,

    g_theta = J_h^-T (K q + F(q)); its trailing block is G_theta_u.
    """
    q = np.asarray(q, dtype=float)
    if transform is None:
        transform = jacobian_h(model, q, active=active)
    G = q @ model.stiffness + _dynamics.gravity_vector(model, q)
    JhT = np.swapaxes(transform.matrix, -1, -2)
    return np.linalg.solve(JhT, G[..., None])[..., 0]


def _n_active(model: RobotModel, active, transform: CollocatedTransform | None) -> int:
    if transform is not None:
        return transform.n_active
    return model.n_tendons if active is None else len(tuple(active))


def g_theta_u(model: RobotModel, q, active=None, transform: CollocatedTransform | None = None) -> np.ndarray:
    """Unactuated rows of the transformed elastic + gravity forces; zero
    exactly on the attainable equilibria set."""
    full = transformed_forces(model, q, active=active, transform=transform)
    return full[..., _n_active(model, active, transform):]


def equilibrium_input(model: RobotModel, q, active=None, transform: CollocatedTransform | None = None) -> np.ndarray:
    """Signed input balancing elastic + gravity forces at q (actuated rows
    of the transformed force vector); the static feedforward term."""
    full = transformed_forces(model, q, active=active, transform=transform)
    return full[..., : _n_active(model, active, transform)]


@dataclass(frozen=True)
class PartitionedDynamics:
    """Equation-of-motion terms in collocated coordinates.

    M_theta thetaddot + (C_theta + D_theta) thetadot + K_theta + F_theta
        = [I; 0] u
    """

    M: np.ndarray
    C: np.ndarray
    D: np.ndarray
    K: np.ndarray  # transformed elastic force vector
    F: np.ndarray  # transformed gravity force vector
    A: np.ndarray  # identity over zeros, by construction
    n_active: int

    @property
    def M_aa(self):
        return self.M[: self.n_active, : self.n_active]

    @property
    def M_uu(self):
        return self.M[self.n_active:, self.n_active:]

    @property
    def G_u(self):
        return self.K[self.n_active:] + self.F[self.n_active:]


def _jacobian_h_dot(model: RobotModel, q, qdot, active, step: float = 1e-6) -> np.ndarray:
    """d/dt J_h by central differences along the velocity direction."""
    speed = float(np.linalg.norm(qdot))
    n = model.n
    if speed < 1e-14:
        return np.zeros((n, n))
    direction = qdot / speed
    Apm = _actuation.actuation_matrix(
        model, np.stack([q + step * direction, q - step * direction]), active=active
    )
    dA = (Apm[0] - Apm[1]) / (2.0 * step) * speed
    na = dA.shape[-1]
    out = np.zeros((n, n))
    out[:na, :] = dA.T
    return out


def partition_dynamics(model: RobotModel, q, qdot, active=None) -> PartitionedDynamics:
    """Congruence transform of the dynamics by J_h^-1 including the
    velocity-dependent correction from d/dt J_h."""
    q = np.asarray(q, dtype=float)
    qdot = np.asarray(qdot, dtype=float)
    mats = _dynamics.assemble_matrices(model, q, qdot, active=active)
    tr = jacobian_h(model, q, active=active, A=mats.A)
    Jhinv = tr.inverse
    JhinvT = Jhinv.T
    Jhdot = _jacobian_h_dot(model, q, qdot, active)
    M_theta = JhinvT @ mats.M @ Jhinv
    C_theta = JhinvT @ (mats.C - mats.M @ Jhinv @ Jhdot) @ Jhinv
    D_theta = JhinvT @ mats.D @ Jhinv
    K_theta = JhinvT @ (mats.K @ q)
    F_theta = JhinvT @ mats.F
    na = tr.n_active
    A_theta = np.zeros((model.n, na))
    A_theta[:na, :na] = np.eye(na)
    return PartitionedDynamics(M_theta, C_theta, D_theta, K_theta, F_theta, A_theta, na)
