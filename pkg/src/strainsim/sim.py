"""Time integration, static equilibrium solving, and the nested
closed-loop runner with a truth-vs-internal-model mismatch hook.

All inputs u below are signed (pulling negative); tension magnitudes exist
only at the scenario/CLI boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import actuation as _actuation
from . import collocated as _collocated
from . import control as _control
from . import dynamics as _dynamics
from . import kinematics as _kinematics
from .errors import ConfigError, ConvergenceError, DivergenceError, StrainsimError
from .model import RobotModel


@dataclass
class RodState:
    q: np.ndarray
    qdot: np.ndarray

    def copy(self) -> "RodState":
        return RodState(self.q.copy(), self.qdot.copy())


@dataclass(frozen=True)
class SimConfig:
    """Integrator settings and the truth-model perturbation hook."""

    dt: float = 2e-4
    integrator: str = "rk4"
    duration: float = 1.0
    seed: int = 0
    mismatch: dict = field(default_factory=dict)
    mocap_noise: float = 0.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.integrator not in ("rk4", "semi_implicit_euler"):
            raise ConfigError(f"unknown integrator {self.integrator!r}")
        allowed = {"stiffness", "density", "friction"}
        unknown = set(self.mismatch) - allowed
        if unknown:
            raise ConfigError(f"unknown mismatch key(s): {sorted(unknown)}")
        if any(abs(v) >= 0.5 for v in self.mismatch.values()):
            raise ConfigError("mismatch perturbations must stay below 50%")


def apply_mismatch(model: RobotModel, mismatch: dict) -> RobotModel:
    """Truth model with multiplicative parameter perturbations."""
    if not mismatch:
        return model
    return model.with_updates(
        stiffness_scale=1.0 + mismatch.get("stiffness", 0.0),
        density_scale=1.0 + mismatch.get("density", 0.0),
        friction_scale=1.0 + mismatch.get("friction", 0.0),
    )


def _check_finite(state: RodState, t: float, previous: RodState):
    if not (np.all(np.isfinite(state.q)) and np.all(np.isfinite(state.qdot))):
        raise DivergenceError(f"non-finite state at t = {t:.6f} s", last_state=previous)


def step(model: RobotModel, state: RodState, u=None, dt: float = 2e-4,
         integrator: str = "rk4", active=None, A: np.ndarray | None = None) -> RodState:
    """One fixed step of the second-order dynamics with u held."""
    q, qd = state.q, state.qdot
    if integrator == "rk4":
        k1v = _dynamics.forward_dynamics(model, q, qd, u, active, A)
        k1q = qd
        k2v = _dynamics.forward_dynamics(model, q + 0.5 * dt * k1q, qd + 0.5 * dt * k1v, u, active)
        k2q = qd + 0.5 * dt * k1v
        k3v = _dynamics.forward_dynamics(model, q + 0.5 * dt * k2q, qd + 0.5 * dt * k2v, u, active)
        k3q = qd + 0.5 * dt * k2v
        k4v = _dynamics.forward_dynamics(model, q + dt * k3q, qd + dt * k3v, u, active)
        k4q = qd + dt * k3v
        new = RodState(
            q + dt / 6.0 * (k1q + 2 * k2q + 2 * k3q + k4q),
            qd + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v),
        )
    elif integrator == "semi_implicit_euler":
        vnew = _dynamics.semi_implicit_velocity(model, q, qd, dt, u, active, A)
        new = RodState(q + dt * vnew, vnew)
    else:
        raise ConfigError(f"unknown integrator {integrator!r}")
    _check_finite(new, float("nan"), state)
    return new


def solve_static_equilibrium(model: RobotModel, u=None, q0=None, active=None,
                             tol: float = 1e-10, max_iters: int = 100) -> np.ndarray:
    """Newton solve of K q + F(q) = A(q) u with a finite-difference Jacobian.

    Ambiguity between multiple solutions resolves to the one nearest the
    initial guess via damped steps.
    """
    n = model.n
    q = np.zeros(n) if q0 is None else np.asarray(q0, dtype=float).copy()
    if u is not None:
        u = np.asarray(u, dtype=float)
        if not np.any(u != 0.0):
            u = None

    def residual(qq):
        r = qq @ model.stiffness + _dynamics.gravity_vector(model, qq)
        if u is not None:
            r = r - _actuation.actuation_matrix(model, qq, active=active) @ u
        return r

    r = residual(q)
    fd_step = 1e-7
    eye = np.eye(n)
    for _ in range(max_iters):
        norm = np.linalg.norm(r)
        if norm < tol:
            return q
        batch = np.concatenate([q + fd_step * eye, q - fd_step * eye], axis=0)
        rb = residual(batch)
        Jr = (rb[:n] - rb[n:]).T / (2.0 * fd_step)
        try:
            delta = np.linalg.solve(Jr, -r)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError("singular Jacobian in static solve", residual=norm) from exc
        scale = 1.0
        for _ in range(40):
            q_try = q + scale * delta
            r_try = residual(q_try)
            if np.linalg.norm(r_try) < norm:
                q, r = q_try, r_try
                break
            scale *= 0.5
        else:
            raise ConvergenceError("static solve stalled (no descent step)", residual=norm)
    raise ConvergenceError(
        f"static solve did not reach tolerance in {max_iters} iterations", residual=float(np.linalg.norm(r))
    )


@dataclass(frozen=True)
class TargetCommand:
    """One regulation goal: task-space target held for a time window.

    replay re-issues the reference configuration stored when the same
    target was last visited in another mode (the shrinking-window protocol:
    converge once, then replay the stored shape faster).
    """

    x_d: np.ndarray
    window: float
    mode: str  # precomputed | online | two_phase | replay

    def __post_init__(self):
        if self.mode not in ("precomputed", "online", "two_phase", "replay"):
            raise ConfigError(f"unknown target mode {self.mode!r}")
        if self.window <= 0:
            raise ConfigError("target window must be positive")


@dataclass(frozen=True)
class ControlConfig:
    """Both control layers plus loop rates."""

    regulator: _control.RegulatorGains
    clik: _control.ClikGains
    control_dt: float = 1e-3
    clik_dt: float = 1e-2
    feedback_mode: str = "exact"  # exact | measured_lengths
    length_map: _actuation.LengthCoordinateMap | None = None
    precompute_dt: float = 0.02
    precompute_max_iters: int = 20000
    precompute_tol_task: float = 1e-8
    precompute_tol_eq: float = 1e-8
    # two_phase: fraction of the window driven by the precomputed reference
    # alone before the online refinement engages
    two_phase_switch: float = 0.5

    def __post_init__(self):
        if self.feedback_mode not in ("exact", "measured_lengths"):
            raise ConfigError(f"unknown feedback mode {self.feedback_mode!r}")
        if self.feedback_mode == "measured_lengths" and self.length_map is None:
            raise ConfigError("measured_lengths feedback requires a fitted length map")


@dataclass
class TrajectoryLog:
    """Uniform-rate record of one closed-loop run.

    Command u is stored as non-negative tension magnitude; x holds the true
    task coordinates of the truth model.
    """

    time: np.ndarray
    q: np.ndarray
    qdot: np.ndarray
    theta_a: np.ndarray
    lengths: np.ndarray
    tension: np.ndarray
    x: np.ndarray
    energy_kinetic: np.ndarray
    energy_elastic: np.ndarray
    targets: list
    active: tuple
    markers: tuple
    selector: tuple
    log_dt: float
    error: str | None = None


def _ratio(big: float, small: float, name: str) -> int:
    ratio = big / small
    if abs(ratio - round(ratio)) > 1e-9:
        raise ConfigError(f"{name} must be an integer multiple of the smaller rate")
    return int(round(ratio))


def run_closed_loop(
    truth_model: RobotModel,
    internal_model: RobotModel,
    control_cfg: ControlConfig,
    sim_cfg: SimConfig,
    targets: list[TargetCommand],
    active=None,
    markers=(0.38,),
    selector=((0, "x"), (0, "y"), (0, "z")),
    log_dt: float | None = None,
    initial_state: RodState | None = None,
) -> TrajectoryLog:
    """Nested two-level regulation over a sequence of target windows.

    The outer CLIK evolves the reference configuration (online modes use
    truth-model task feedback, the precomputed mode runs offline on the
    internal model); the inner regulator tracks the resulting actuation
    coordinates at the control rate; the truth model integrates at the
    simulation step. Divergence truncates the log and records the error.
    """
    markers = tuple(markers)
    selector = tuple(tuple(s) for s in selector)
    active_idx = tuple(range(truth_model.n_tendons)) if active is None else tuple(int(k) for k in active)
    na = len(active_idx)
    m = len(selector)
    if na != m:
        raise ConfigError(f"need as many task coordinates as active tendons (m={m}, n_a={na})")

    dt = sim_cfg.dt
    control_dt = control_cfg.control_dt
    substeps = _ratio(control_dt, dt, "control_dt")
    clik_every = _ratio(control_cfg.clik_dt, control_dt, "clik_dt")
    log_dt = control_dt if log_dt is None else log_dt
    log_every = _ratio(log_dt, control_dt, "log_dt")

    rng = np.random.default_rng(sim_cfg.seed)

    if initial_state is None:
        q_eq = solve_static_equilibrium(truth_model, None)
        state = RodState(q_eq, np.zeros_like(q_eq))
    else:
        state = initial_state.copy()
    q_ref = solve_static_equilibrium(internal_model, None)

    reg_state = _control.RegulatorState.zero(na)
    rows = {k: [] for k in ("t", "q", "qd", "th", "lc", "u", "x", "ek", "ee")}
    targets_meta = []
    error_msg = None

    def log_row(t, ev, u_signed):
        rows["t"].append(t)
        rows["q"].append(state.q.copy())
        rows["qd"].append(state.qdot.copy())
        rows["th"].append(ev.coordinates.copy())
        rows["lc"].append(ev.lengths.copy())
        rows["u"].append(-u_signed)
        rows["x"].append(_kinematics.task_map(truth_model, state.q, markers, selector))
        rows["ek"].append(_dynamics.kinetic_energy(truth_model, state.q, state.qdot))
        rows["ee"].append(_dynamics.elastic_energy(truth_model, state.q))

    t = 0.0
    u_signed = np.zeros(na)
    reference_store: dict[bytes, np.ndarray] = {}
    try:
        for tgt_index, target in enumerate(targets):
            x_d = np.asarray(target.x_d, dtype=float)
            if x_d.shape != (m,):
                raise ConfigError(f"target {tgt_index} has dimension {x_d.shape}, task needs {m}")
            ticks = max(1, int(round(target.window / control_dt)))
            targets_meta.append({
                "index": tgt_index,
                "t_start": t,
                "t_end": t + ticks * control_dt,
                "x_d": x_d.tolist(),
                "mode": target.mode,
                "window": target.window,
            })
            if target.mode == "replay":
                stored = reference_store.get(x_d.tobytes())
                if stored is None:
                    raise ConfigError(
                        f"target {tgt_index} replays {x_d}, but no earlier window stored it"
                    )
                q_ref = stored.copy()
            elif target.mode in ("precomputed", "two_phase"):
                q_ref = _control.precompute_reference(
                    internal_model, control_cfg.clik, x_d, q_ref,
                    active=active_idx, markers=markers, selector=selector,
                    dt=control_cfg.precompute_dt,
                    max_iters=control_cfg.precompute_max_iters,
                    tol_task=control_cfg.precompute_tol_task,
                    tol_eq=control_cfg.precompute_tol_eq,
                    tension_limit=control_cfg.regulator.tension_limit,
                )
            theta_a_d = _actuation.actuation_coordinates(internal_model, q_ref, active=active_idx)
            feedforward = _collocated.equilibrium_input(internal_model, q_ref, active=active_idx)
            online_from = 0
            if target.mode == "two_phase":
                online_from = int(round(control_cfg.two_phase_switch * ticks))

            for tick in range(ticks):
                if target.mode in ("online", "two_phase") and tick >= online_from and tick % clik_every == 0:
                    x_meas = _kinematics.task_map(truth_model, state.q, markers, selector)
                    if sim_cfg.mocap_noise > 0.0:
                        x_meas = x_meas + rng.uniform(-sim_cfg.mocap_noise, sim_cfg.mocap_noise, m)
                    q_ref = _control.clik_step(
                        internal_model, control_cfg.clik, q_ref, x_meas, x_d,
                        control_cfg.clik_dt, active=active_idx, markers=markers, selector=selector,
                    )
                    theta_a_d = _actuation.actuation_coordinates(internal_model, q_ref, active=active_idx)
                    feedforward = _collocated.equilibrium_input(internal_model, q_ref, active=active_idx)

                ev = _actuation.actuation_eval(truth_model, state.q, active=active_idx)
                if control_cfg.feedback_mode == "exact":
                    theta_a = ev.coordinates
                else:
                    theta_a = control_cfg.length_map(ev.lengths)
                theta_a_dot = ev.A.T @ state.qdot
                u_signed = _control.psat_id_plus(
                    internal_model, control_cfg.regulator, reg_state,
                    theta_a_d, theta_a, theta_a_dot, q_ref, control_dt,
                    active=active_idx, feedforward=feedforward,
                )
                if tick % log_every == 0:
                    log_row(t, ev, u_signed)
                A_now = ev.A
                for _ in range(substeps):
                    state = step(truth_model, state, u_signed, dt, sim_cfg.integrator,
                                 active=active_idx, A=A_now)
                    A_now = None  # only valid at the tick configuration
                t += control_dt
            if target.mode != "replay":
                reference_store[x_d.tobytes()] = q_ref.copy()
        ev = _actuation.actuation_eval(truth_model, state.q, active=active_idx)
        log_row(t, ev, u_signed)
    except (DivergenceError, StrainsimError) as exc:
        if isinstance(exc, ConfigError):
            raise
        error_msg = f"{type(exc).__name__}: {exc}"

    return TrajectoryLog(
        time=np.asarray(rows["t"]),
        q=np.asarray(rows["q"]),
        qdot=np.asarray(rows["qd"]),
        theta_a=np.asarray(rows["th"]),
        lengths=np.asarray(rows["lc"]),
        tension=np.asarray(rows["u"]),
        x=np.asarray(rows["x"]),
        energy_kinetic=np.asarray(rows["ek"]),
        energy_elastic=np.asarray(rows["ee"]),
        targets=targets_meta,
        active=active_idx,
        markers=markers,
        selector=selector,
        log_dt=log_dt,
        error=error_msg,
    )
