"""Scenario harness: task protocols, metrics, workspace sampling, file IO.

Three shipped task analogs:

* coiling2d      -- planar coiling with the straight tendon pair; base
                    points are revisited upward / downward / upward with
                    shrinking windows.
* triangle4d     -- three targets in a 4D task space (tip xyz plus the
                    y-coordinate of a pre-tip marker), converged once, then
                    replayed with shrinking windows.
* pendulum_strike -- intercept a point pendulum at its lowest point at the
                    moment of peak speed.

Band semantics are reach-and-remain on the per-coordinate (infinity-norm)
error; the equivalent task velocity divides the Euclidean target
displacement by the time to reach and remain in a band.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ellipk

from . import kinematics as _kinematics
from . import sim as _sim
from .config import ScenarioSpec
from .errors import ConfigError, StrainsimError
from .model import RobotModel

TRAJECTORY_MAGIC = "# strainsim-trajectory-v1"
METRICS_SCHEMA = "strainsim-metrics-v1"
WORKSPACE_MAGIC = "# strainsim-workspace-v1"

GRAVITY_ACCEL = 9.81


def pendulum_target(pivot, cable_length: float, release_angle: float,
                    dt: float = 1e-5) -> tuple[np.ndarray, float]:
    """Strike pose (lowest point, peak speed) and its time for a point
    pendulum released from rest.

    Integrates thetaddot = -(g/l) sin(theta) with RK4 from the release
    angle and returns the first crossing of the vertical; a zero release
    angle returns the rest pose at t = 0. "Down" is +z of the model frame.
    """
    pivot = np.asarray(pivot, dtype=float)
    if not 0.0 <= release_angle <= np.pi / 2:
        raise ConfigError("release angle must lie in [0, pi/2]")
    x_d = pivot + np.array([0.0, 0.0, cable_length])
    if release_angle < 1e-12:
        return x_d, 0.0
    omega2 = GRAVITY_ACCEL / cable_length

    def accel(th):
        return -omega2 * np.sin(th)

    th, thd, t = release_angle, 0.0, 0.0
    while th > 0.0:
        k1 = thd
        a1 = accel(th)
        k2 = thd + 0.5 * dt * a1
        a2 = accel(th + 0.5 * dt * k1)
        k3 = thd + 0.5 * dt * a2
        a3 = accel(th + 0.5 * dt * k2)
        k4 = thd + dt * a3
        a4 = accel(th + dt * k3)
        th_new = th + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        thd_new = thd + dt / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4)
        if th_new <= 0.0:
            t += dt * th / (th - th_new)  # interpolate the crossing
            break
        th, thd, t = th_new, thd_new, t + dt
    return x_d, float(t)


def pendulum_quarter_period(cable_length: float, release_angle: float) -> float:
    """Closed-form quarter period via the complete elliptic integral."""
    k = np.sin(release_angle / 2.0)
    return float(np.sqrt(cable_length / GRAVITY_ACCEL) * ellipk(k * k))


def pendulum_peak_speed(cable_length: float, release_angle: float) -> float:
    """Energy-conservation speed at the lowest point."""
    return float(np.sqrt(2.0 * GRAVITY_ACCEL * cable_length * (1.0 - np.cos(release_angle))))


def expand_targets(spec: ScenarioSpec) -> list[_sim.TargetCommand]:
    """Turn the scenario description into the executed target sequence."""
    if spec.kind == "custom":
        if not spec.targets:
            raise ConfigError("custom scenario needs explicit [[scenario.targets]]")
        return [_sim.TargetCommand(np.asarray(x), w, m) for x, w, m in spec.targets]

    if spec.kind == "pendulum_strike":
        pend = spec.pendulum
        pivot = pend.get("pivot", (0.147, 0.156, -0.073))
        cable = float(pend.get("cable_length", 0.305))
        release = np.deg2rad(float(pend.get("release_angle_deg", 80.0)))
        window = float(pend.get("window", 1.0))
        x_strike, _ = pendulum_target(pivot, cable, release)
        if len(spec.selector) != 3:
            raise ConfigError("pendulum_strike drives the 3D tip position")
        return [_sim.TargetCommand(x_strike, window, "precomputed")]

    if not spec.points:
        raise ConfigError(f"{spec.kind} scenario needs [[scenario.points]]")
    points = [np.asarray(p, dtype=float) for p in spec.points]
    if len(spec.phase_modes) != len(spec.phase_windows):
        raise ConfigError("phase_modes and phase_windows must have equal length")
    repeats = spec.phase_repeats
    if len(repeats) != len(spec.phase_windows):
        repeats = tuple(1 for _ in spec.phase_windows)

    targets = []
    for phase, (window, mode) in enumerate(zip(spec.phase_windows, spec.phase_modes)):
        seq = points
        if spec.kind == "coiling2d" and phase % 2 == 1:
            seq = points[::-1]  # downward pass retraces the sequence
        for _ in range(repeats[phase]):
            for x in seq:
                targets.append(_sim.TargetCommand(x, window, mode))
    return targets


def check_targets_in_box(targets, spec: ScenarioSpec):
    """Cartesian target components must stay inside the workspace box."""
    for t_index, tgt in enumerate(targets):
        for j, (_, ax) in enumerate(spec.selector):
            axis = "xyz".index(ax) if isinstance(ax, str) else int(ax)
            lo, hi = spec.workspace_box[axis]
            v = tgt.x_d[j]
            if not lo <= v <= hi:
                raise ConfigError(
                    f"target {t_index} coordinate {j} = {v:.4f} outside workspace box axis {axis}"
                )


@dataclass(frozen=True)
class BandMetric:
    band: float
    time_to_band: float | None
    equivalent_velocity: float | None


@dataclass(frozen=True)
class TargetMetrics:
    index: int
    mode: str
    window: float
    displacement: float
    bands: tuple
    steady_state_rms: float
    peak_task_speed: float


@dataclass(frozen=True)
class TaskMetrics:
    targets: tuple
    peak_task_speed: float
    bands: tuple


def _reach_and_remain(t: np.ndarray, err_inf: np.ndarray, band: float) -> float | None:
    """Earliest time after which the error never leaves the band."""
    inside = err_inf <= band
    if not inside[-1]:
        return None
    # last index where the error is outside; entry is the next sample
    outside = np.nonzero(~inside)[0]
    if outside.size == 0:
        return float(t[0])
    k = outside[-1] + 1
    if k >= len(t):
        return None
    return float(t[k])


def compute_metrics(log: _sim.TrajectoryLog, bands) -> TaskMetrics:
    """Per-target reach-and-remain band metrics from a trajectory log."""
    bands = tuple(sorted((float(b) for b in bands), reverse=True))
    out = []
    overall_peak = 0.0
    for meta in log.targets:
        sel = (log.time >= meta["t_start"] - 1e-12) & (log.time <= meta["t_end"] + 1e-12)
        if not np.any(sel):
            continue  # window never executed (truncated run)
        t = log.time[sel]
        x = log.x[sel]
        x_d = np.asarray(meta["x_d"])
        err = x_d - x
        err_inf = np.abs(err).max(axis=1)
        displacement = float(np.linalg.norm(x_d - x[0]))
        t_rel = t - t[0]
        band_metrics = []
        for band in bands:
            reach = _reach_and_remain(t_rel, err_inf, band)
            if reach is None:
                band_metrics.append(BandMetric(band, None, None))
            else:
                vel = 0.0 if reach <= 0.0 else displacement / reach
                band_metrics.append(BandMetric(band, reach, vel))
        tail = t_rel >= 0.8 * t_rel[-1]
        rms = float(np.sqrt(np.mean(np.sum(err[tail] ** 2, axis=1))))
        if len(t) > 2:
            speed = np.linalg.norm(np.gradient(x, t, axis=0), axis=1)
            peak = float(speed.max())
        else:
            peak = 0.0
        overall_peak = max(overall_peak, peak)
        out.append(TargetMetrics(
            index=meta["index"], mode=meta["mode"], window=meta["window"],
            displacement=displacement, bands=tuple(band_metrics),
            steady_state_rms=rms, peak_task_speed=peak,
        ))
    return TaskMetrics(targets=tuple(out), peak_task_speed=overall_peak, bands=bands)


def metrics_to_dict(metrics: TaskMetrics, log: _sim.TrajectoryLog) -> dict:
    return {
        "schema": METRICS_SCHEMA,
        "bands": list(metrics.bands),
        "peak_task_speed": metrics.peak_task_speed,
        "active_tendons": [k + 1 for k in log.active],
        "markers": list(log.markers),
        "selector": [[mi, ax] for mi, ax in log.selector],
        "error": log.error,
        "targets": [
            {
                "index": tm.index,
                "mode": tm.mode,
                "window": tm.window,
                "t_start": log.targets[tm.index]["t_start"],
                "t_end": log.targets[tm.index]["t_end"],
                "x_d": log.targets[tm.index]["x_d"],
                "displacement": tm.displacement,
                "steady_state_rms": tm.steady_state_rms,
                "peak_task_speed": tm.peak_task_speed,
                "bands": [
                    {
                        "band": bm.band,
                        "time_to_band": bm.time_to_band,
                        "equivalent_velocity": bm.equivalent_velocity,
                    }
                    for bm in tm.bands
                ],
            }
            for tm in metrics.targets
        ],
    }


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def trajectory_header(n: int, n_a: int, m: int) -> list[str]:
    cols = ["t"]
    cols += [f"q{i}" for i in range(n)]
    cols += [f"qd{i}" for i in range(n)]
    cols += [f"theta_a{i}" for i in range(n_a)]
    cols += [f"L_c{i}" for i in range(n_a)]
    cols += [f"u{i}" for i in range(n_a)]
    cols += [f"x{i}" for i in range(m)]
    cols += ["energy_kinetic", "energy_elastic"]
    return cols


def write_trajectories(log: _sim.TrajectoryLog, outdir: Path) -> list[Path]:
    """One CSV per target window, fixed column order, 17 significant digits."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    n = log.q.shape[1]
    n_a = log.theta_a.shape[1]
    m = log.x.shape[1]
    header = trajectory_header(n, n_a, m)
    paths = []
    for meta in log.targets:
        sel = (log.time >= meta["t_start"] - 1e-12) & (log.time <= meta["t_end"] + 1e-12)
        if not np.any(sel):
            continue
        path = outdir / f"trajectory_{meta['index']:03d}.csv"
        with open(path, "w", newline="") as fh:
            fh.write(TRAJECTORY_MAGIC + "\n")
            writer = csv.writer(fh)
            writer.writerow(header)
            blocks = [log.time[sel, None], log.q[sel], log.qdot[sel], log.theta_a[sel],
                      log.lengths[sel], log.tension[sel], log.x[sel],
                      log.energy_kinetic[sel, None], log.energy_elastic[sel, None]]
            data = np.concatenate(blocks, axis=1)
            for row in data:
                writer.writerow([_fmt(v) for v in row])
        paths.append(path)
    return paths


def read_trajectory(path) -> tuple[list[str], np.ndarray]:
    """Read one trajectory CSV back; raises on schema mismatch."""
    with open(path, newline="") as fh:
        magic = fh.readline().strip()
        if magic != TRAJECTORY_MAGIC:
            raise ConfigError(f"{path}: unknown trajectory schema {magic!r}")
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    return header, np.asarray(rows)


def log_from_metrics_dir(outdir) -> _sim.TrajectoryLog:
    """Rebuild a TrajectoryLog from emitted files (round-trip support)."""
    outdir = Path(outdir)
    with open(outdir / "metrics.json") as fh:
        meta = json.load(fh)
    if meta.get("schema") != METRICS_SCHEMA:
        raise ConfigError(f"unknown metrics schema {meta.get('schema')!r}")
    n_a = len(meta["active_tendons"])
    m = len(meta["selector"])
    chunks = []
    targets = []
    for tgt in meta["targets"]:
        header, data = read_trajectory(outdir / f"trajectory_{tgt['index']:03d}.csv")
        n = sum(1 for c in header if c.startswith("q") and not c.startswith("qd"))
        chunks.append((header, data, n))
        targets.append({
            "index": tgt["index"], "t_start": tgt["t_start"], "t_end": tgt["t_end"],
            "x_d": tgt["x_d"], "mode": tgt["mode"], "window": tgt["window"],
        })
    n = chunks[0][2]
    full = []
    seen_t = set()
    for _, data, _ in chunks:
        for row in data:
            if row[0] not in seen_t:
                seen_t.add(row[0])
                full.append(row)
    full = np.asarray(sorted(full, key=lambda r: r[0]))
    c = 1
    q = full[:, c:c + n]; c += n
    qd = full[:, c:c + n]; c += n
    th = full[:, c:c + n_a]; c += n_a
    lc = full[:, c:c + n_a]; c += n_a
    u = full[:, c:c + n_a]; c += n_a
    x = full[:, c:c + m]; c += m
    ek = full[:, c]; c += 1
    ee = full[:, c]
    return _sim.TrajectoryLog(
        time=full[:, 0], q=q, qdot=qd, theta_a=th, lengths=lc, tension=u, x=x,
        energy_kinetic=ek, energy_elastic=ee, targets=targets,
        active=tuple(k - 1 for k in meta["active_tendons"]),
        markers=tuple(meta["markers"]),
        selector=tuple((mi, ax) for mi, ax in meta["selector"]),
        log_dt=float(full[1, 0] - full[0, 0]) if len(full) > 1 else 0.0,
        error=meta.get("error"),
    )


def run_scenario(spec: ScenarioSpec, outdir, mode_override: str | None = None,
                 seed_override: int | None = None) -> tuple[_sim.TrajectoryLog, TaskMetrics]:
    """Execute the scenario and write trajectory CSVs plus metrics.json."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    targets = expand_targets(spec)
    if mode_override is not None:
        targets = [_sim.TargetCommand(t.x_d, t.window, mode_override) for t in targets]
    check_targets_in_box(targets, spec)
    sim_cfg = spec.sim
    if seed_override is not None:
        sim_cfg = _sim.SimConfig(
            dt=sim_cfg.dt, integrator=sim_cfg.integrator, duration=sim_cfg.duration,
            seed=seed_override, mismatch=sim_cfg.mismatch, mocap_noise=sim_cfg.mocap_noise,
        )
    internal = spec.model
    truth = _sim.apply_mismatch(internal, sim_cfg.mismatch)
    log = _sim.run_closed_loop(
        truth, internal, spec.control_config(), sim_cfg, targets,
        active=spec.active, markers=spec.markers, selector=spec.selector,
        log_dt=spec.log_dt,
    )
    metrics = compute_metrics(log, spec.bands)
    write_trajectories(log, outdir)
    with open(outdir / "metrics.json", "w") as fh:
        json.dump(metrics_to_dict(metrics, log), fh, indent=1, sort_keys=True)
        fh.write("\n")
    if log.error is not None:
        raise StrainsimError(f"scenario ended early: {log.error}")
    return log, metrics


def sample_workspace(model: RobotModel, n_samples: int, seed: int = 0,
                     tension_limit: float = 5.0, active=None) -> np.ndarray:
    """Static tip positions under random tendon tensions (workspace cloud).

    Returns rows [u_1..u_na, tip_x, tip_y, tip_z]; failed static solves are
    skipped.
    """
    rng = np.random.default_rng(seed)
    idx = tuple(range(model.n_tendons)) if active is None else tuple(active)
    rows = []
    q_guess = _sim.solve_static_equilibrium(model, None)
    L = model.geometry.length
    for _ in range(n_samples):
        tension = rng.uniform(0.0, tension_limit, len(idx))
        u = -tension
        try:
            q_star = _sim.solve_static_equilibrium(model, u, q0=q_guess, active=idx)
        except StrainsimError:
            continue
        tip = _kinematics.forward_kinematics(model, q_star, L).position
        rows.append(np.concatenate([tension, tip]))
        q_guess = q_star
    return np.asarray(rows)


def write_workspace(rows: np.ndarray, path, n_active: int):
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write(WORKSPACE_MAGIC + "\n")
        writer = csv.writer(fh)
        writer.writerow([f"u{i}" for i in range(n_active)] + ["tip_x", "tip_y", "tip_z"])
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
