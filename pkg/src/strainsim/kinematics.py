"""Backbone kinematics: strain field evaluation, forward kinematics and
body Jacobians.

The backbone frame solves g' = g * hat(xi(X)) from the clamped base. Each
grid gap is stepped with a fourth-order two-point Magnus exponential; the
body Jacobian and its time derivative are propagated with the exact
differential of that discrete scheme, so Jacobian/finite-difference
consistency holds to truncation level rather than scheme level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError
from .liegroup import (
    Pose,
    adjoint_inv,
    adjoint_small,
    exp_se3,
    tangent_operator,
    tangent_operator_pair,
)
from .model import RobotModel, ScanGrid

_SQRT3_12 = np.sqrt(3.0) / 12.0


def eval_strain(model: RobotModel, q: np.ndarray, X) -> np.ndarray:
    """Strain twist xi(X) = xi0(X) + B(X) q; X may be scalar or array."""
    L = model.geometry.length
    Xarr = np.atleast_1d(np.asarray(X, dtype=float))
    if np.any(Xarr < -1e-12) or np.any(Xarr > L + 1e-12):
        raise DomainError(f"abscissa outside [0, {L}]")
    B = model.basis.evaluate(Xarr)
    xi = model.basis.reference(Xarr) + np.einsum("gij,...j->...gi", B, np.asarray(q, dtype=float))
    if np.isscalar(X) or np.ndim(X) == 0:
        return xi[..., 0, :]
    return xi


@dataclass(frozen=True)
class GapPieces:
    """Per-gap Magnus quantities; leading batch axes follow q."""

    omega: np.ndarray  # (..., G, 6)
    dexp: np.ndarray  # (..., G, 6, 6) tangent operator at omega
    domega: np.ndarray  # (..., G, 6, n) d omega / d q
    omega_dot: np.ndarray | None = None  # (..., G, 6)
    dexp_dot: np.ndarray | None = None  # (..., G, 6, 6)
    domega_dot: np.ndarray | None = None  # (..., G, 6, n)


def _apply_basis(B: np.ndarray, x: np.ndarray) -> np.ndarray:
    """(G, 6, n) basis applied to (..., n) coefficients -> (..., G, 6)."""
    G, six, n = B.shape
    return (x @ B.reshape(G * six, n).T).reshape(x.shape[:-1] + (G, six))


def _gap_pieces(grid: ScanGrid, q: np.ndarray, qdot: np.ndarray | None, need_jac: bool) -> GapPieces:
    q = np.asarray(q, dtype=float)
    xia = grid.xi0a + _apply_basis(grid.Ba, q)
    xib = grid.xi0b + _apply_basis(grid.Bb, q)
    h = grid.h[:, None]
    c = (_SQRT3_12 * grid.h * grid.h)[:, None]
    ad_a = adjoint_small(xia)
    ad_b = adjoint_small(xib)
    omega = 0.5 * h * (xia + xib) + c * (ad_a @ xib[..., None])[..., 0]
    domega = None
    if need_jac:
        domega = 0.5 * h[..., None] * (grid.Ba + grid.Bb) + c[..., None] * (ad_a @ grid.Bb - ad_b @ grid.Ba)
    if qdot is None:
        return GapPieces(omega, tangent_operator(omega), domega)
    qdot = np.asarray(qdot, dtype=float)
    xida = _apply_basis(grid.Ba, qdot)
    xidb = _apply_basis(grid.Bb, qdot)
    ad_da = adjoint_small(xida)
    ad_db = adjoint_small(xidb)
    omega_dot = 0.5 * h * (xida + xidb) + c * (
        (ad_da @ xib[..., None])[..., 0] + (ad_a @ xidb[..., None])[..., 0]
    )
    dexp, dexp_dot = tangent_operator_pair(omega, omega_dot)
    domega_dot = None
    if need_jac:
        domega_dot = c[..., None] * (ad_da @ grid.Bb - ad_db @ grid.Ba)
    return GapPieces(omega, dexp, domega, omega_dot, dexp_dot, domega_dot)


@dataclass(frozen=True)
class BackboneStates:
    """Frames/Jacobians at the grid abscissae (clamped base excluded)."""

    rotations: np.ndarray | None  # (..., G, 3, 3)
    positions: np.ndarray | None  # (..., G, 3)
    jacobian: np.ndarray | None  # (..., G, 6, n)
    jacobian_dot: np.ndarray | None  # (..., G, 6, n)
    body_velocity: np.ndarray | None  # (..., G, 6) eta = J qdot
    velocity_rate_geom: np.ndarray | None  # (..., G, 6) Jdot qdot


def propagate(
    grid: ScanGrid,
    q: np.ndarray,
    qdot: np.ndarray | None = None,
    *,
    need_pose: bool = True,
    need_jac: bool = True,
    need_jdot: bool = False,
) -> BackboneStates:
    """Walk the scan grid from the base, accumulating pose / Jacobian state.

    With qdot given, eta = J qdot and rho = Jdot qdot are always produced;
    the full (6 x n) Jdot only when need_jdot is set.
    """
    q = np.asarray(q, dtype=float)
    batch = q.shape[:-1]
    n = q.shape[-1]
    G = grid.nodes.shape[0]
    S = grid.substeps
    need_jac = need_jac or need_jdot
    with_vel = qdot is not None
    pieces = _gap_pieces(grid, q, qdot, need_jac)

    # Per-step affine action on the stacked state (V | R) with value
    # columns V = [J | eta] and rate columns R = [rho | Jd]:
    #   V' = Ad V + incV,   R' = Lower V + Ad R + incR
    # where Ad is the inverse adjoint of the step exponential and
    # Lower = -ad_u Ad carries the frame-motion rate of the step.
    E = exp_se3(pieces.omega)
    E4 = E.as_matrix() if need_pose else None
    ad_inv = adjoint_inv(E) if (need_jac or with_vel) else None

    ncolsV = ncolsR = 0
    if need_jac:
        ncolsV += n
    if with_vel:
        ncolsV += 1  # eta
        ncolsR += 1  # rho
    if need_jdot:
        ncolsR += n

    incV = np.zeros(batch + (G * S, 6, ncolsV)) if ncolsV else None
    incR = np.zeros(batch + (G * S, 6, ncolsR)) if ncolsR else None
    Lower = None
    if need_jac:
        incV[..., :, :, :n] = pieces.dexp @ pieces.domega
    if with_vel:
        qdot = np.asarray(qdot, dtype=float)
        U = incV[..., :, :, :n] if need_jac else pieces.dexp @ pieces.domega
        u_small = (pieces.dexp @ pieces.omega_dot[..., None])[..., 0]
        Lower = -adjoint_small(u_small) @ ad_inv
        incV[..., :, :, n if need_jac else 0] = (U @ qdot[..., None, :, None])[..., 0]
        dexp_dot_domega = pieces.dexp_dot @ pieces.domega
        incR[..., :, :, 0] = (
            (dexp_dot_domega @ qdot[..., None, :, None])[..., 0]
            + (pieces.dexp @ (pieces.domega_dot @ qdot[..., None, :, None]))[..., 0]
        )
        if need_jdot:
            incR[..., :, :, 1:] = dexp_dot_domega + pieces.dexp @ pieces.domega_dot

    def per_gap(arr, right=False):
        """Fold the substep axis: gap transform = step_S o ... o step_1."""
        if arr is None:
            return None
        shaped = arr.reshape(batch + (G, S) + arr.shape[len(batch) + 1:])
        return shaped

    if S > 1:
        E4s, Ads, Lows = per_gap(E4), per_gap(ad_inv), per_gap(Lower)
        iVs, iRs = per_gap(incV), per_gap(incR)
        E4 = E4s[..., :, 0, :, :] if need_pose else None
        Ad = Ads[..., :, 0, :, :] if Ads is not None else None
        Low = Lows[..., :, 0, :, :] if Lower is not None else None
        iV = iVs[..., :, 0, :, :] if incV is not None else None
        iR = iRs[..., :, 0, :, :] if incR is not None else None
        for s in range(1, S):
            if need_pose:
                E4 = E4 @ E4s[..., :, s, :, :]
            if Ad is not None:
                Ad_s = Ads[..., :, s, :, :]
                if Low is not None:
                    Low = Lows[..., :, s, :, :] @ Ad + Ad_s @ Low
                    iR = Lows[..., :, s, :, :] @ iV + Ad_s @ iR + iRs[..., :, s, :, :]
                if iV is not None:
                    iV = Ad_s @ iV + iVs[..., :, s, :, :]
                Ad = Ad_s @ Ad
        ad_inv, Lower, incV, incR = Ad, Low, iV, iR

    def scan_first(arr):
        # move the gap axis in front of the batch axes for cheap indexing
        if arr is None:
            return None
        return np.ascontiguousarray(np.moveaxis(arr, len(batch), 0)) if batch else arr

    E4 = scan_first(E4)
    ad_inv = scan_first(ad_inv)
    Lower = scan_first(Lower)
    incV = scan_first(incV)
    incR = scan_first(incR)

    out_g = np.empty((G,) + batch + (4, 4)) if need_pose else None
    out_V = np.empty((G,) + batch + (6, ncolsV)) if ncolsV else None
    out_R = np.empty((G,) + batch + (6, ncolsR)) if ncolsR else None

    g = np.broadcast_to(np.eye(4), batch + (4, 4)).copy() if need_pose else None
    V = np.zeros(batch + (6, ncolsV)) if ncolsV else None
    R = np.zeros(batch + (6, ncolsR)) if ncolsR else None

    for k in range(G):
        if need_pose:
            g = g @ E4[k]
            out_g[k] = g
        if ncolsR:
            R = Lower[k] @ V + ad_inv[k] @ R + incR[k]
            out_R[k] = R
        if ncolsV:
            V = ad_inv[k] @ V + incV[k]
            out_V[k] = V

    def unscan(arr):
        return np.moveaxis(arr, 0, len(batch)) if (batch and arr is not None) else arr

    rotations = positions = jac = jac_dot = eta = rho = None
    if need_pose:
        out_g = unscan(out_g)
        rotations = out_g[..., :3, :3]
        positions = out_g[..., :3, 3]
    if ncolsV:
        out_V = unscan(out_V)
        if need_jac:
            jac = out_V[..., :, :n]
        if with_vel:
            eta = out_V[..., :, n if need_jac else 0]
    if ncolsR:
        out_R = unscan(out_R)
        rho = out_R[..., :, 0]
        if need_jdot:
            jac_dot = out_R[..., :, 1:]

    return BackboneStates(rotations, positions, jac, jac_dot, eta, rho)


def forward_kinematics(model: RobotModel, q: np.ndarray, X: float, subintervals: int | None = None) -> Pose:
    """Frame of the cross-section at abscissa X; identity at the base."""
    L = model.geometry.length
    if not -1e-12 <= X <= L + 1e-12:
        raise DomainError(f"abscissa {X} outside [0, {L}]")
    q = np.asarray(q, dtype=float)
    if X < 1e-15:
        batch = q.shape[:-1]
        return Pose(np.broadcast_to(np.eye(3), batch + (3, 3)).copy(), np.zeros(batch + (3,)))
    grid = model.scan_grid_to(X, subintervals)
    states = propagate(grid, q, need_pose=True, need_jac=False)
    return Pose(states.rotations[..., -1, :, :], states.positions[..., -1, :])


def body_jacobian(model: RobotModel, q: np.ndarray, X: float) -> np.ndarray:
    """J(X, q) with eta(X) = J qdot the body twist of the frame at X."""
    L = model.geometry.length
    if not -1e-12 <= X <= L + 1e-12:
        raise DomainError(f"abscissa {X} outside [0, {L}]")
    q = np.asarray(q, dtype=float)
    if X < 1e-15:
        return np.zeros(q.shape[:-1] + (6, q.shape[-1]))
    grid = model.scan_grid_to(X)
    states = propagate(grid, q, need_pose=False, need_jac=True)
    return states.jacobian[..., -1, :, :]


_AXIS_INDEX = {"x": 0, "y": 1, "z": 2, 0: 0, 1: 1, 2: 2}


def _parse_selector(selector, n_markers: int) -> list[tuple[int, int]]:
    parsed = []
    for entry in selector:
        try:
            marker, axis = entry
            idx = int(marker)
            ax = _AXIS_INDEX[axis]
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"bad task selector entry {entry!r}") from exc
        if not 0 <= idx < n_markers:
            raise ConfigError(f"selector references marker {idx}, have {n_markers}")
        parsed.append((idx, ax))
    return parsed


def task_map(model: RobotModel, q: np.ndarray, markers, selector) -> np.ndarray:
    """Selected world coordinates of the listed backbone frames."""
    sel = _parse_selector(selector, len(markers))
    poses = [forward_kinematics(model, q, X) for X in markers]
    q = np.asarray(q, dtype=float)
    out = np.empty(q.shape[:-1] + (len(sel),))
    for j, (mi, ax) in enumerate(sel):
        out[..., j] = poses[mi].position[..., ax]
    return out


def task_jacobian(model: RobotModel, q: np.ndarray, markers, selector) -> np.ndarray:
    """d task_map / d q, rows matching the selector order."""
    sel = _parse_selector(selector, len(markers))
    q = np.asarray(q, dtype=float)
    n = q.shape[-1]
    cache = {}
    out = np.empty(q.shape[:-1] + (len(sel), n))
    for j, (mi, ax) in enumerate(sel):
        if mi not in cache:
            X = markers[mi]
            if X < 1e-15:
                cache[mi] = np.zeros(q.shape[:-1] + (3, n))
            else:
                grid = model.scan_grid_to(X)
                st = propagate(grid, q, need_pose=True, need_jac=True)
                R = st.rotations[..., -1, :, :]
                Jv = st.jacobian[..., -1, 3:, :]
                cache[mi] = R @ Jv
        out[..., j, :] = cache[mi][..., ax, :]
    return out
