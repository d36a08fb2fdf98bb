"""Two control layers.

Inner loop: P-satI-D+ shape regulator on the actuation coordinates, with a
saturated (tanh) integral, optional rate damping, and static feedforward of
elastic and gravity forces at the target configuration. Commands are signed
tendon inputs clamped to [-tension_limit, 0] (tendons only pull).

Outer loop: closed-loop inverse kinematics for the underactuated system.
Two decoupled feedback actions evolve the reference configuration: one
drives the task error to zero, the other drives the unactuated equilibrium
residual G_theta_u to zero, each projected so it does not disturb the
other. Fixed points satisfy both x = x_d and G_theta_u = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import actuation as _actuation
from . import collocated as _collocated
from . import kinematics as _kinematics
from .errors import ConfigError, NumericalError, UnreachableTargetError
from .model import RobotModel


def _gain_vector(value, size: int, name: str, positive: bool) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(size, float(arr))
    if arr.shape != (size,):
        raise ConfigError(f"{name} must be a scalar or length-{size} vector")
    if positive and np.any(arr <= 0):
        raise ConfigError(f"{name} entries must be positive")
    if not positive and np.any(arr < 0):
        raise ConfigError(f"{name} entries must be non-negative")
    return arr


@dataclass(frozen=True)
class RegulatorGains:
    """Diagonal gains of the inner regulator; P and I strictly positive."""

    gamma_p: np.ndarray
    gamma_i: np.ndarray
    gamma_d: np.ndarray
    tension_limit: float = 5.0

    @staticmethod
    def create(n_active: int, gamma_p, gamma_i, gamma_d, tension_limit: float = 5.0) -> "RegulatorGains":
        return RegulatorGains(
            gamma_p=_gain_vector(gamma_p, n_active, "gamma_p", positive=True),
            gamma_i=_gain_vector(gamma_i, n_active, "gamma_i", positive=True),
            gamma_d=_gain_vector(gamma_d, n_active, "gamma_d", positive=False),
            tension_limit=float(tension_limit),
        )


@dataclass
class RegulatorState:
    """Mutable per-run regulator memory."""

    integral: np.ndarray
    last_command: np.ndarray

    @staticmethod
    def zero(n_active: int) -> "RegulatorState":
        return RegulatorState(np.zeros(n_active), np.zeros(n_active))


def psat_id_plus(
    model: RobotModel,
    gains: RegulatorGains,
    state: RegulatorState,
    theta_a_d: np.ndarray,
    theta_a: np.ndarray,
    theta_a_dot: np.ndarray,
    q_d: np.ndarray,
    dt: float,
    active=None,
    feedforward: np.ndarray | None = None,
) -> np.ndarray:
    """One regulator tick; returns the signed command and updates state.

    The integral accumulates dt * tanh(error) componentwise (so each step
    moves it by at most dt) and is frozen on channels whose command is
    clamped. The feedforward is the static balance input at q_d; pass it
    precomputed when q_d is unchanged between ticks.
    """
    if feedforward is None:
        feedforward = _collocated.equilibrium_input(model, q_d, active=active)
    error = theta_a_d - theta_a
    raw = gains.gamma_p * error + gains.gamma_i * state.integral - gains.gamma_d * theta_a_dot + feedforward
    command = np.clip(raw, -gains.tension_limit, 0.0)
    free = command == raw
    state.integral = state.integral + dt * np.tanh(error) * free
    state.last_command = command
    return command


@dataclass(frozen=True)
class ClikGains:
    """Outer-loop gains, pseudo-inverse damping, and a per-step cap on the
    reference change (guards the explicit integration against transients)."""

    gamma_z: np.ndarray
    gamma_eps: np.ndarray
    damping: float = 1e-3
    max_step: float = 0.5

    @staticmethod
    def create(m: int, n_unactuated: int, gamma_z, gamma_eps, damping: float = 1e-3,
               max_step: float = 0.5) -> "ClikGains":
        return ClikGains(
            gamma_z=_gain_vector(gamma_z, m, "gamma_z", positive=True),
            gamma_eps=_gain_vector(gamma_eps, n_unactuated, "gamma_eps", positive=True),
            damping=float(damping),
            max_step=float(max_step),
        )


def damped_pinv(A: np.ndarray, damping: float) -> np.ndarray:
    """SVD pseudo-inverse with damping scaled by the largest singular value."""
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    lam = damping * (s[0] if s.size and s[0] > 0 else 1.0)
    filt = s / (s * s + lam * lam)
    return (Vt.T * filt) @ U.T


def null_projector(A: np.ndarray, rank_rtol: float = 1e-10) -> np.ndarray:
    """Orthogonal projector onto the null space of A (rank-revealing SVD).

    Exact to machine precision, so feedback through it cannot disturb A's
    row space; the damping of the outer pseudo-inverses never leaks here.
    """
    _, s, Vt = np.linalg.svd(A)
    rank = int(np.sum(s > rank_rtol * s[0])) if s.size and s[0] > 0 else 0
    V_null = Vt[rank:].T
    return V_null @ V_null.T


def _fd_grad_g_theta_u(model: RobotModel, q: np.ndarray, active, step: float = 1e-6) -> np.ndarray:
    """d G_theta_u / d q by one batched forward-difference sweep.

    Feedback-direction accuracy only; the fixed points are set by the
    residual itself, so first-order differences suffice.
    """
    n = q.shape[-1]
    batch = np.concatenate([q[None], q + step * np.eye(n)], axis=0)
    vals = _collocated.g_theta_u(model, batch, active=active)
    return (vals[1:] - vals[0]).T / step


@dataclass(frozen=True)
class ClikDerivatives:
    """Per-step cached task/equilibrium Jacobians over theta.

    J_eq rows and G_u are jointly row-normalized: the unactuated force
    components mix units spanning several orders of magnitude, and the
    damped pseudo-inverses need comparable rows to resolve the null space.
    Normalization leaves the zero set and the fixed points unchanged.
    """

    transform: _collocated.CollocatedTransform
    J_task: np.ndarray  # (m, n) over theta
    J_eq: np.ndarray  # (n - n_a, n) over theta, row-normalized
    G_u: np.ndarray  # row-normalized residual
    G_u_raw: np.ndarray
    eq_scale: np.ndarray  # per-row normalization applied to J_eq and G_u


def clik_derivatives(model: RobotModel, q: np.ndarray, active, markers, selector) -> ClikDerivatives:
    transform = _collocated.jacobian_h(model, q, active=active)
    J_task = _kinematics.task_jacobian(model, q, markers, selector) @ transform.inverse
    J_eq = _fd_grad_g_theta_u(model, q, active) @ transform.inverse
    G_u_raw = _collocated.g_theta_u(model, q, active=active, transform=transform)
    scale = np.linalg.norm(J_eq, axis=1)
    scale[scale < 1e-30] = 1.0
    return ClikDerivatives(transform, J_task, J_eq / scale[:, None], G_u_raw / scale, G_u_raw, scale)


def clik_projectors(
    model: RobotModel,
    q: np.ndarray,
    active=None,
    markers=(0.38,),
    selector=((0, "x"), (0, "y"), (0, "z")),
    derivatives: ClikDerivatives | None = None,
    damping: float = 1e-3,
) -> tuple[np.ndarray, np.ndarray]:
    """Decoupled feedback projectors (P_eps, P_Z).

    P_eps maps task error into theta-rates inside the null space of the
    equilibrium residual gradient; P_Z does the reverse. Rank collapse of
    the projected task Jacobian means the task is unreachable on the
    equilibrium manifold.
    """
    if derivatives is None:
        derivatives = clik_derivatives(model, q, active, markers, selector)
    J_x = derivatives.J_task
    J_G = derivatives.J_eq
    N_G = null_projector(J_G)
    JxNG = J_x @ N_G
    sv = np.linalg.svd(JxNG, compute_uv=False)
    if sv[0] <= 0 or sv[-1] / sv[0] < 1e-12:
        raise UnreachableTargetError(
            "task Jacobian loses rank on the equilibrium manifold", residual=float(sv[-1])
        )
    P_eps = N_G @ damped_pinv(JxNG, damping)
    N_x = null_projector(J_x)
    P_Z = N_x @ damped_pinv(J_G @ N_x, damping)
    return P_eps, P_Z


def clik_step(
    model: RobotModel,
    gains: ClikGains,
    q_ref: np.ndarray,
    x: np.ndarray,
    x_d: np.ndarray,
    dt: float,
    active=None,
    markers=(0.38,),
    selector=((0, "x"), (0, "y"), (0, "z")),
) -> np.ndarray:
    """One explicit-Euler step of the reference-configuration flow."""
    der = clik_derivatives(model, q_ref, active, markers, selector)
    P_eps, P_Z = clik_projectors(
        model, q_ref, active, markers, selector, derivatives=der, damping=gains.damping
    )
    theta_dot = P_eps @ (gains.gamma_z * (x_d - x)) - P_Z @ (gains.gamma_eps * der.G_u)
    dq = dt * (der.transform.inverse @ theta_dot)
    norm = float(np.linalg.norm(dq))
    if norm > gains.max_step:
        dq *= gains.max_step / norm
    return q_ref + dq


def _polish_reference(model, q, x_d, active, markers, selector, scale,
                      tol_task, tol_eq, max_iters=30):
    """Damped-Newton solve of the square fixed-point system

        [ task_map(q) - x_d ] = 0
        [ G_theta_u(q)      ]

    Equilibrium rows are balanced by the entry scale so the Newton system
    conditions well; residual checks stay on the raw quantities.
    """
    q = q.copy()
    n = q.shape[-1]
    step = 1e-6

    def residuals(qq):
        x = _kinematics.task_map(model, qq, markers, selector)
        g_raw = _collocated.g_theta_u(model, qq, active=active)
        return x, g_raw

    try:
        x, g_raw = residuals(q)
    except (NumericalError, np.linalg.LinAlgError):
        return q, np.inf, np.inf
    best = (q.copy(), float(np.linalg.norm(x_d - x)), float(np.linalg.norm(g_raw)))
    for _ in range(max_iters):
        err_task = float(np.linalg.norm(x_d - x))
        err_eq = float(np.linalg.norm(g_raw))
        if (err_task + err_eq) < (best[1] + best[2]):
            best = (q.copy(), err_task, err_eq)
        if err_task < tol_task and err_eq < tol_eq:
            return q, err_task, err_eq
        residual = np.concatenate([x - x_d, g_raw / scale])
        try:
            batch = np.concatenate([q[None], q + step * np.eye(n)], axis=0)
            xs = _kinematics.task_map(model, batch, markers, selector)
            gs = _collocated.g_theta_u(model, batch, active=active) / scale
            Jr = np.vstack([(xs[1:] - xs[0]).T, (gs[1:] - gs[0]).T]) / step
        except (NumericalError, np.linalg.LinAlgError):
            break
        norm0 = np.linalg.norm(residual)
        sv_max = np.linalg.norm(Jr, 2)
        accepted = False
        # plain Newton first, then Levenberg regularizations for the
        # weakly conditioned task directions
        for reg in (0.0, 1e-4, 1e-3, 1e-2, 1e-1):
            try:
                if reg == 0.0:
                    delta = np.linalg.solve(Jr, -residual)
                else:
                    lamsq = (reg * sv_max) ** 2
                    delta = np.linalg.solve(Jr.T @ Jr + lamsq * np.eye(n), -Jr.T @ residual)
            except np.linalg.LinAlgError:
                continue
            if not np.all(np.isfinite(delta)):
                continue
            lam = 1.0
            for _ in range(8):
                q_try = q + lam * delta
                try:
                    x_t, g_t = residuals(q_try)
                except (NumericalError, np.linalg.LinAlgError):
                    lam *= 0.5
                    continue  # stepped into a degenerate region; shorten
                if np.linalg.norm(np.concatenate([x_t - x_d, g_t / scale])) < norm0:
                    q, x, g_raw = q_try, x_t, g_t
                    accepted = True
                    break
                lam *= 0.5
            if accepted:
                break
        if not accepted:
            break  # no descent at any regularization; hand back to the flow
    return best


def _check_feasible(model, q, active, tension_limit, push_slack: float = 0.5,
                    pull_slack: float = 1.5):
    """Reject references whose static balance is grossly unholdable.

    Mildly clamped balances are allowed through: the inner loop saturates
    those channels and settles nearby, and the online refinement trims the
    residual task error. Shapes needing large pushing forces belong to a
    different equilibrium sheet and are rejected.
    """
    if tension_limit is None:
        return
    u_star = _collocated.equilibrium_input(model, q, active=active)
    if np.any(u_star > push_slack * tension_limit) or np.any(u_star < -pull_slack * tension_limit):
        raise UnreachableTargetError(
            "target equilibrium needs inputs far outside the tension range "
            f"(balance inputs {np.array2string(u_star, precision=3)})",
            residual=float(np.abs(u_star).max()),
        )


def precompute_reference(
    model: RobotModel,
    gains: ClikGains,
    x_d: np.ndarray,
    q0: np.ndarray,
    active=None,
    markers=(0.38,),
    selector=((0, "x"), (0, "y"), (0, "z")),
    dt: float = 0.02,
    max_iters: int = 20000,
    tol_task: float = 1e-8,
    tol_eq: float = 1e-8,
    tension_limit: float | None = None,
) -> np.ndarray:
    """Converge the CLIK flow offline on model-predicted poses, then polish
    the fixed point with a square Newton solve.

    The flow handles the global approach; weakly conditioned equilibrium
    directions converge slowly under the damped projections, so once the
    flow residuals reach the vicinity the polish drives both the task error
    and the raw unactuated residual to tolerance quadratically. With
    tension_limit given, a result whose static balance needs inputs outside
    [-limit, 0] is rejected as unreachable.
    """
    q_ref = np.asarray(q0, dtype=float).copy()
    x_d = np.asarray(x_d, dtype=float)

    # Continuation: long task traversals are split into waypoints so the
    # flow stays inside the basin of the physically connected equilibrium
    # branch instead of sliding onto a tension-infeasible sheet. The Newton
    # polish engages near the final waypoint only, for the same reason.
    x_start = _kinematics.task_map(model, q_ref, markers, selector)
    hop_size = 0.03
    n_hops = max(1, int(np.ceil(float(np.linalg.norm(x_d - x_start)) / hop_size)))
    hop_tol = 2e-3
    hop_iter_cap = 400
    polish_gate = 5e-3
    flow_between_polish = 100

    it_budget = max_iters
    err_task = err_eq = np.inf
    best_polish = None
    for hop in range(1, n_hops + 1):
        x_way = x_start + (hop / n_hops) * (x_d - x_start)
        last = hop == n_hops
        hop_iters = 0
        next_polish_attempt = 0
        while it_budget > 0:
            x = _kinematics.task_map(model, q_ref, markers, selector)
            der = clik_derivatives(model, q_ref, active, markers, selector)
            err_task = float(np.linalg.norm(x_way - x))
            err_eq = float(np.linalg.norm(der.G_u))
            if last:
                late = it_budget <= max_iters // 2
                if hop_iters >= next_polish_attempt and (err_task < polish_gate or late):
                    q_pol, p_task, p_eq = _polish_reference(
                        model, q_ref, x_d, active, markers, selector,
                        der.eq_scale, tol_task, tol_eq,
                    )
                    if p_task < tol_task and p_eq < tol_eq:
                        _check_feasible(model, q_pol, active, tension_limit)
                        return q_pol
                    if best_polish is None or (p_task + p_eq) < (best_polish[1] + best_polish[2]):
                        best_polish = (q_pol, p_task, p_eq)
                    next_polish_attempt = hop_iters + flow_between_polish
            elif err_task < hop_tol or hop_iters >= hop_iter_cap:
                break  # advance to the next waypoint
            P_eps, P_Z = clik_projectors(
                model, q_ref, active, markers, selector, derivatives=der, damping=gains.damping
            )
            theta_dot = P_eps @ (gains.gamma_z * (x_way - x)) - P_Z @ (gains.gamma_eps * der.G_u)
            dq = dt * (der.transform.inverse @ theta_dot)
            norm = float(np.linalg.norm(dq))
            if norm > gains.max_step:
                dq *= gains.max_step / norm
            q_ref = q_ref + dq
            it_budget -= 1
            hop_iters += 1
    if best_polish is not None:
        _, p_task, p_eq = best_polish
        raise UnreachableTargetError(
            f"fixed-point polish stalled (task residual {p_task:.3e} m, "
            f"equilibrium residual {p_eq:.3e})", residual=p_task,
        )
    raise UnreachableTargetError(
        f"inverse kinematics did not converge in {max_iters} iterations "
        f"(task residual {err_task:.3e} m, equilibrium residual {err_eq:.3e})",
        residual=err_task,
    )
