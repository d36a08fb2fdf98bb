"""Minimal SE(3)/se(3) algebra for the rod kinematics.

Twists are 6-vectors ordered (angular, linear). All functions accept a single
twist/pose or a stacked batch (leading axes broadcast); everything is pure
numpy with no state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Below this rotation angle the Rodrigues coefficients switch to their series
# expansions to avoid division by a near-zero angle.
_SMALL_ANGLE = 1e-8


@dataclass(frozen=True)
class Pose:
    """Frame of a backbone cross-section: rotation matrix and position."""

    rotation: np.ndarray  # (..., 3, 3)
    position: np.ndarray  # (..., 3)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def as_matrix(self) -> np.ndarray:
        """Homogeneous 4x4 matrix."""
        shape = self.position.shape[:-1]
        g = np.zeros(shape + (4, 4))
        g[..., :3, :3] = self.rotation
        g[..., :3, 3] = self.position
        g[..., 3, 3] = 1.0
        return g

    @staticmethod
    def from_matrix(g: np.ndarray) -> "Pose":
        return Pose(np.ascontiguousarray(g[..., :3, :3]), np.ascontiguousarray(g[..., :3, 3]))

    def compose(self, other: "Pose") -> "Pose":
        return Pose(
            self.rotation @ other.rotation,
            (self.rotation @ other.position[..., None])[..., 0] + self.position,
        )

    def inverse(self) -> "Pose":
        rt = np.swapaxes(self.rotation, -1, -2)
        return Pose(rt, -(rt @ self.position[..., None])[..., 0])


def skew(v: np.ndarray) -> np.ndarray:
    """3-vector(s) -> skew-symmetric matrix (batched)."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def hat(v: np.ndarray) -> np.ndarray:
    """Twist(s) -> 4x4 se(3) matrix with the skew block top-left."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (4, 4))
    out[..., :3, :3] = skew(v[..., :3])
    out[..., :3, 3] = v[..., 3:]
    return out


def _rotation_coeffs(phi: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Rodrigues coefficients a = sin(phi)/phi, b = (1-cos)/phi^2,
    c = (phi-sin)/phi^3 and their small-angle series, elementwise."""
    phi = np.asarray(phi, dtype=float)
    small = phi < _SMALL_ANGLE
    safe = np.where(small, 1.0, phi)
    phi2 = safe * safe
    a = np.where(small, 1.0 - phi * phi / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - phi * phi / 24.0, (1.0 - np.cos(safe)) / phi2)
    c = np.where(small, 1.0 / 6.0 - phi * phi / 120.0, (safe - np.sin(safe)) / (phi2 * safe))
    return a, b, c, phi


def exp_se3(v: np.ndarray, h: float = 1.0) -> Pose:
    """Closed-form exponential of h*hat(v); Rodrigues with series fallback."""
    v = np.asarray(v, dtype=float)
    w = h * v[..., :3]
    u = h * v[..., 3:]
    phi = np.linalg.norm(w, axis=-1)
    a, b, c, _ = _rotation_coeffs(phi)
    W = skew(w)
    W2 = W @ W
    eye = np.broadcast_to(np.eye(3), W.shape)
    R = eye + a[..., None, None] * W + b[..., None, None] * W2
    V = eye + b[..., None, None] * W + c[..., None, None] * W2
    p = (V @ u[..., None])[..., 0]
    return Pose(R, p)


def adjoint_big(g: Pose) -> np.ndarray:
    """Ad_g mapping body twists between frames, 6x6 (batched)."""
    R = g.rotation
    out = np.zeros(R.shape[:-2] + (6, 6))
    out[..., :3, :3] = R
    out[..., 3:, 3:] = R
    out[..., 3:, :3] = skew(g.position) @ R
    return out


def adjoint_inv(g: Pose) -> np.ndarray:
    """Ad_{g^-1} without forming the inverse pose."""
    Rt = np.swapaxes(g.rotation, -1, -2)
    out = np.zeros(Rt.shape[:-2] + (6, 6))
    out[..., :3, :3] = Rt
    out[..., 3:, 3:] = Rt
    out[..., 3:, :3] = -Rt @ skew(g.position)
    return out


def adjoint_small(v: np.ndarray) -> np.ndarray:
    """Lie bracket matrix ad_v, 6x6 (batched)."""
    v = np.asarray(v, dtype=float)
    W = skew(v[..., :3])
    U = skew(v[..., 3:])
    out = np.zeros(v.shape[:-1] + (6, 6))
    out[..., :3, :3] = W
    out[..., 3:, :3] = U
    out[..., 3:, 3:] = W
    return out


def coadjoint_map(p: np.ndarray) -> np.ndarray:
    """Matrix Q(p) with Q(p) a = ad_a^T p; Q(p) is skew-symmetric."""
    p = np.asarray(p, dtype=float)
    Pw = skew(p[..., :3])
    Pv = skew(p[..., 3:])
    out = np.zeros(p.shape[:-1] + (6, 6))
    out[..., :3, :3] = Pw
    out[..., :3, 3:] = Pv
    out[..., 3:, :3] = Pv
    return out


_TANGENT_TERMS_MAX = 24


def _tangent_terms(max_norm: float) -> int:
    """Series length leaving the tail below machine epsilon for the largest
    per-step twist in the batch."""
    x = max(float(max_norm), 1e-3)
    term = 1.0
    for m in range(1, _TANGENT_TERMS_MAX):
        term *= x / (m + 1)
        if term < 1e-17:
            return m + 1
    return _TANGENT_TERMS_MAX


def tangent_operator(omega: np.ndarray) -> np.ndarray:
    """Right Jacobian T(w) of exp on SE(3): sum_m (-ad_w)^m / (m+1)!.

    Satisfies (exp(w)^-1 d/dt exp(w))^vee = T(w) wdot.
    """
    A = -adjoint_small(omega)
    out = np.broadcast_to(np.eye(6), A.shape).copy()
    P = out.copy()
    fact = 1.0
    for m in range(1, _tangent_terms(np.abs(omega).sum(axis=-1).max())):
        P = A @ P
        fact *= m + 1
        out += P / fact
    return out


def tangent_operator_pair(omega: np.ndarray, domega: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """tangent_operator and its directional derivative along domega.

    The derivative differentiates the truncated series term by term, so the
    pair is exactly consistent as functions.
    """
    A = -adjoint_small(omega)
    B = -adjoint_small(domega)
    shape = A.shape
    T = np.broadcast_to(np.eye(6), shape).copy()
    P = T.copy()
    S = np.zeros(shape)
    DT = np.zeros(shape)
    fact = 1.0
    for m in range(1, _tangent_terms(np.abs(omega).sum(axis=-1).max())):
        S = A @ S + B @ P
        P = A @ P
        fact *= m + 1
        T += P / fact
        DT += S / fact
    return T, DT


def tangent_operator_deriv(omega: np.ndarray, domega: np.ndarray) -> np.ndarray:
    """Directional derivative of tangent_operator at omega along domega."""
    return tangent_operator_pair(omega, domega)[1]
