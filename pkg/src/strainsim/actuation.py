"""Tendon routing geometry, actuation wrench basis, capstan-style friction,
tendon lengths and actuation coordinates.

Sign convention: the wrench basis column for tendon k is (d x t, t) with t
the unit tangent of the path running base -> tip. A pulling input is
therefore NEGATIVE; the scenario/CLI layer stores non-negative tension
magnitudes and negates them at this boundary. With zero friction the
actuation matrix satisfies A^T = d L_c / d q, so the actuation coordinates
are integrable outputs.

Friction accumulates with the spatial turning of the cable path: the local
exponent rate is phi = || d/dX (R t) || = || omega x t + t' ||, measured in
rad/m, and tension decays by exp(-mu_bar * integral phi).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericalError
from .model import RobotModel, TendonRoute, build_scan_grid, gauss_rule

_DEGENERATE_TANGENT = 1e-12


def _route_geometry(model: RobotModel, route: TendonRoute, X: np.ndarray):
    """Tendon offset d(X) and its first two analytic X-derivatives."""
    X = np.asarray(X, dtype=float)
    f = route.radial_offset_fraction
    r = model.geometry.radius(X)
    rp = model.geometry.radius_rate
    alpha = route.azimuth(X)
    ap = route.azimuth_rate
    ca, sa = np.cos(alpha), np.sin(alpha)
    e_r = np.stack([ca, sa, np.zeros_like(ca)], axis=-1)
    e_t = np.stack([-sa, ca, np.zeros_like(ca)], axis=-1)
    d = f * r[..., None] * e_r
    dp = f * (rp * e_r + (r * ap)[..., None] * e_t)
    dpp = f * ((2.0 * rp * ap) * e_t - (r * ap * ap)[..., None] * e_r)
    return d, dp, dpp


@dataclass(frozen=True)
class _TendonSamples:
    """Per-sample arrays; leading axes (T, S) = (tendon, sample)."""

    B: np.ndarray  # (T, S, 6, n)
    Bp: np.ndarray  # (T, S, 6, n)
    xi0: np.ndarray  # (T, S, 6)
    d: np.ndarray  # (T, S, 3)
    dp: np.ndarray  # (T, S, 3)
    dpp: np.ndarray  # (T, S, 3)


@dataclass(frozen=True)
class _TendonStack:
    """All active tendons stacked on one leading axis for vector evaluation."""

    indices: tuple
    weights: np.ndarray  # (T, G)
    h: np.ndarray  # (T, G)
    friction: np.ndarray  # (T,)
    any_friction: bool
    at_nodes: _TendonSamples
    at_sub_a: _TendonSamples
    at_sub_b: _TendonSamples


def _samples_at(model: RobotModel, route: TendonRoute, X: np.ndarray) -> _TendonSamples:
    basis = model.basis
    d, dp, dpp = _route_geometry(model, route, X)
    return _TendonSamples(
        B=basis.evaluate(X),
        Bp=basis.evaluate_derivative(X),
        xi0=basis.reference(X),
        d=d,
        dp=dp,
        dpp=dpp,
    )


def _stack_samples(parts: list[_TendonSamples]) -> _TendonSamples:
    return _TendonSamples(*(np.stack([getattr(p, f) for p in parts]) for f in
                            ("B", "Bp", "xi0", "d", "dp", "dpp")))


def _tendon_stack(model: RobotModel, active) -> _TendonStack:
    idx = _active_indices(model, active)
    key = ("tendon_stack", idx, model.quadrature_nodes)
    stack = model._cache.get(key)
    if stack is None:
        nodes_l, weights_l, h_l, at_n, at_a, at_b = [], [], [], [], [], []
        for k in idx:
            route = model.tendons[k]
            nodes, weights = gauss_rule(0.0, route.termination, model.quadrature_nodes)
            scan = build_scan_grid(model.basis, nodes, weights)
            nodes_l.append(nodes)
            weights_l.append(weights)
            h_l.append(scan.h)
            at_n.append(_samples_at(model, route, nodes))
            at_a.append(_samples_at(model, route, scan.sub_a))
            at_b.append(_samples_at(model, route, scan.sub_b))
        friction = np.array([model.tendons[k].friction for k in idx])
        stack = _TendonStack(
            indices=idx,
            weights=np.stack(weights_l),
            h=np.stack(h_l),
            friction=friction,
            any_friction=bool(np.any(friction > 0.0)),
            at_nodes=_stack_samples(at_n),
            at_sub_a=_stack_samples(at_a),
            at_sub_b=_stack_samples(at_b),
        )
        model._cache[key] = stack
    return stack


def _fields(samples: _TendonSamples, q: np.ndarray, need_phi: bool = True):
    """Path tangent t, its X-derivative, speed |tau| and turning rate phi.

    Output axes (..., T, S, ...) with ... the batch axes of q.
    """
    xi = samples.xi0 + np.einsum("tgij,...j->...tgi", samples.B, q)
    omega, v = xi[..., :3], xi[..., 3:]
    tau = np.cross(omega, samples.d) + v + samples.dp
    speed = np.linalg.norm(tau, axis=-1)
    if np.any(speed < _DEGENERATE_TANGENT):
        raise NumericalError("degenerate tendon tangent (zero path speed)")
    t = tau / speed[..., None]
    if not need_phi:
        return t, None, speed, None
    xip = np.einsum("tgij,...j->...tgi", samples.Bp, q)
    omegap, vp = xip[..., :3], xip[..., 3:]
    taup = np.cross(omegap, samples.d) + np.cross(omega, samples.dp) + vp + samples.dpp
    tp = (taup - t * np.sum(t * taup, axis=-1, keepdims=True)) / speed[..., None]
    phi = np.linalg.norm(np.cross(omega, t) + tp, axis=-1)
    return t, tp, speed, phi


def _friction_at_nodes(stack: _TendonStack, q: np.ndarray) -> np.ndarray:
    """mu_S at the grid nodes by cumulative per-gap Gauss integration."""
    if not stack.any_friction:
        batch = np.asarray(q).shape[:-1]
        return np.zeros(batch + stack.weights.shape)
    *_, phi_a = _fields(stack.at_sub_a, q)
    *_, phi_b = _fields(stack.at_sub_b, q)
    increments = 0.5 * stack.h * (phi_a + phi_b)
    return stack.friction[:, None] * np.cumsum(increments, axis=-1)


def tendon_point(model: RobotModel, index: int, X: float):
    """Offset d(X) from the backbone to the tendon and its X-derivative."""
    route = model.tendons[index]
    if not 0.0 <= X <= route.termination + 1e-12:
        raise DomainError(f"abscissa {X} beyond tendon termination {route.termination}")
    d, dp, _ = _route_geometry(model, route, np.atleast_1d(float(X)))
    return d[0], dp[0]


def _single_samples(model: RobotModel, route: TendonRoute, X: np.ndarray) -> _TendonSamples:
    single = _samples_at(model, route, X)
    return _TendonSamples(*(getattr(single, f)[None] for f in ("B", "Bp", "xi0", "d", "dp", "dpp")))


def tendon_tangent(model: RobotModel, index: int, q: np.ndarray, X: float) -> np.ndarray:
    """Unit tangent of the tendon path at X for configuration q."""
    route = model.tendons[index]
    if not 0.0 <= X <= route.termination + 1e-12:
        raise DomainError(f"abscissa {X} beyond tendon termination {route.termination}")
    samples = _single_samples(model, route, np.atleast_1d(float(X)))
    t, *_ = _fields(samples, np.asarray(q, dtype=float), need_phi=False)
    return t[..., 0, 0, :]


def friction_exponent(model: RobotModel, index: int, q: np.ndarray, X: float,
                      subintervals: int = 33) -> float:
    """Accumulated capstan exponent mu_S(X) = mu_bar * integral_0^X phi."""
    route = model.tendons[index]
    if not 0.0 <= X <= route.termination + 1e-12:
        raise DomainError(f"abscissa {X} beyond tendon termination {route.termination}")
    if route.friction == 0.0 or X < 1e-15:
        return 0.0
    nodes = np.linspace(0.0, X, subintervals + 1)[1:]
    scan = build_scan_grid(model.basis, nodes)
    q = np.asarray(q, dtype=float)
    *_, phi_a = _fields(_single_samples(model, route, scan.sub_a), q)
    *_, phi_b = _fields(_single_samples(model, route, scan.sub_b), q)
    return float(route.friction * np.sum(0.5 * scan.h * (phi_a[..., 0, :] + phi_b[..., 0, :]), axis=-1))


@dataclass(frozen=True)
class ActuationEval:
    """Actuation matrix plus tendon lengths and actuation coordinates."""

    A: np.ndarray  # (..., n, n_active)
    lengths: np.ndarray  # (..., n_active)
    coordinates: np.ndarray  # (..., n_active)


def _active_indices(model: RobotModel, active) -> tuple[int, ...]:
    if active is None:
        return tuple(range(model.n_tendons))
    idx = tuple(int(k) for k in active)
    if any(not 0 <= k < model.n_tendons for k in idx):
        raise DomainError(f"active tendon indices {idx} out of range")
    return idx


def actuation_eval(model: RobotModel, q: np.ndarray, active=None) -> ActuationEval:
    """One-pass evaluation of A(q), tendon lengths and actuation coordinates."""
    q = np.asarray(q, dtype=float)
    stack = _tendon_stack(model, active)
    t, _, speed, _ = _fields(stack.at_nodes, q, need_phi=False)
    wrench = np.concatenate([np.cross(stack.at_nodes.d, t), t], axis=-1)
    if stack.any_friction:
        attenuation = np.exp(-_friction_at_nodes(stack, q))
        A = np.einsum(
            "tg,tgim,...tgi,...tg->...mt", stack.weights, stack.at_nodes.B, wrench, attenuation,
            optimize=True,
        )
        lengths = np.einsum("tg,...tg->...t", stack.weights, speed)
        coords = np.einsum("tg,...tg,...tg->...t", stack.weights, speed, attenuation)
    else:
        A = np.einsum("tg,tgim,...tgi->...mt", stack.weights, stack.at_nodes.B, wrench, optimize=True)
        lengths = np.einsum("tg,...tg->...t", stack.weights, speed)
        coords = lengths.copy()
    return ActuationEval(A, lengths, coords)


def actuation_matrix(model: RobotModel, q: np.ndarray, active=None) -> np.ndarray:
    return actuation_eval(model, q, active).A


def tendon_length(model: RobotModel, q: np.ndarray, active=None) -> np.ndarray:
    return actuation_eval(model, q, active).lengths


def actuation_coordinates(model: RobotModel, q: np.ndarray, active=None) -> np.ndarray:
    return actuation_eval(model, q, active).coordinates


@dataclass(frozen=True)
class LengthCoordinateMap:
    """Affine reconstruction theta_a ~ W L_c + c fitted over workspace
    samples; feedback hook for the measured-lengths controller mode."""

    W: np.ndarray
    c: np.ndarray

    def __call__(self, lengths: np.ndarray) -> np.ndarray:
        return lengths @ self.W.T + self.c


def fit_length_coordinate_map(model: RobotModel, q_samples: np.ndarray, active=None) -> LengthCoordinateMap:
    """Least-squares fit of the actuation coordinates against tendon lengths."""
    q_samples = np.asarray(q_samples, dtype=float)
    ev = actuation_eval(model, q_samples, active)
    ones = np.ones(ev.lengths.shape[:-1] + (1,))
    design = np.concatenate([ev.lengths, ones], axis=-1)
    sol, *_ = np.linalg.lstsq(design, ev.coordinates, rcond=None)
    return LengthCoordinateMap(W=sol[:-1].T, c=sol[-1])
