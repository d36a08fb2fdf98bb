"""TOML configuration loading with strict unknown-key rejection."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # 3.10
    import tomli as tomllib

from . import control as _control
from .errors import ConfigError
from .model import RobotModel, RodGeometry, StrainBasis, TendonRoute
from .sim import ControlConfig, SimConfig

_MODEL_KEYS = {
    "length", "base_radius", "tip_radius", "density", "young_modulus",
    "shear_modulus", "gravity", "damping_beta", "quadrature_nodes",
    "fk_subintervals", "basis", "tendons",
}
_BASIS_KEYS = {"bend_x", "bend_y", "torsion", "axial", "shear_x", "shear_y", "reference_strain"}
_TENDON_KEYS = {"kind", "base_angle_deg", "radial_offset_fraction", "termination", "friction"}
_CONTROL_KEYS = {
    "gamma_p", "gamma_i", "gamma_d", "tension_limit",
    "clik_gamma_z", "clik_gamma_eps", "clik_damping",
    "control_dt", "clik_dt", "feedback_mode",
    "precompute_dt", "precompute_max_iters", "precompute_tol_task", "precompute_tol_eq",
    "two_phase_switch",
}
_SIM_KEYS = {"dt", "integrator", "seed", "mocap_noise", "log_dt", "mismatch"}
_MISMATCH_KEYS = {"stiffness", "density", "friction"}
_SCENARIO_KEYS = {
    "kind", "markers", "selector", "active_tendons", "bands", "workspace_box",
    "points", "targets", "phase_windows", "phase_modes", "phase_repeats",
    "pendulum", "initial_settle",
}
_POINT_KEYS = {"x"}
_TARGET_KEYS = {"x", "window", "mode"}
_PENDULUM_KEYS = {"pivot", "cable_length", "release_angle_deg", "window", "mass"}
_TOP_KEYS = {"model", "control", "sim", "scenario"}


def _check_keys(table: dict, allowed: set, path: str):
    unknown = set(table) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in [{path}]")


def load_toml(path) -> dict:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def build_model(table: dict) -> RobotModel:
    _check_keys(table, _MODEL_KEYS, "model")
    basis_tbl = dict(table.get("basis", {}))
    _check_keys(basis_tbl, _BASIS_KEYS, "model.basis")
    reference = tuple(basis_tbl.pop("reference_strain", (0, 0, 0, 0, 0, 1)))
    geometry = RodGeometry(
        length=float(table.get("length", 0.38)),
        base_radius=float(table.get("base_radius", 0.0160)),
        tip_radius=float(table.get("tip_radius", 0.0048)),
        density=float(table.get("density", 1070.0)),
        young_modulus=float(table.get("young_modulus", 83e3)),
        shear_modulus=float(table.get("shear_modulus", 28e3)),
        gravity=tuple(float(v) for v in table.get("gravity", (0.0, 0.0, 9.81))),
    )
    degrees = {k: int(v) for k, v in basis_tbl.items()}
    basis = StrainBasis(length=geometry.length, degrees=degrees, reference_strain=reference)
    tendons = []
    for i, ttbl in enumerate(table.get("tendons", [])):
        _check_keys(ttbl, _TENDON_KEYS, f"model.tendons[{i}]")
        tendons.append(TendonRoute(
            kind=ttbl.get("kind", "straight"),
            base_angle=np.deg2rad(float(ttbl.get("base_angle_deg", 30.0))),
            radial_offset_fraction=float(ttbl.get("radial_offset_fraction", 0.5)),
            termination=float(ttbl.get("termination", 0.325)),
            friction=float(ttbl.get("friction", 0.1)),
        ))
    kwargs = {}
    if tendons:
        kwargs["tendons"] = tuple(tendons)
    return RobotModel(
        geometry=geometry,
        basis=basis,
        quadrature_nodes=int(table.get("quadrature_nodes", 33)),
        fk_subintervals=int(table.get("fk_subintervals", 32)),
        damping_beta=float(table.get("damping_beta", 0.05)),
        **kwargs,
    )


def build_control(table: dict, n_active: int, m: int, n: int) -> ControlConfig:
    _check_keys(table, _CONTROL_KEYS, "control")
    regulator = _control.RegulatorGains.create(
        n_active,
        table.get("gamma_p", 500.0),
        table.get("gamma_i", 200.0),
        table.get("gamma_d", 10.0),
        tension_limit=float(table.get("tension_limit", 5.0)),
    )
    clik = _control.ClikGains.create(
        m, n - n_active,
        table.get("clik_gamma_z", 5.0),
        table.get("clik_gamma_eps", 5.0),
        damping=float(table.get("clik_damping", 1e-3)),
    )
    return ControlConfig(
        regulator=regulator,
        clik=clik,
        control_dt=float(table.get("control_dt", 1e-3)),
        clik_dt=float(table.get("clik_dt", 1e-2)),
        feedback_mode=table.get("feedback_mode", "exact"),
        precompute_dt=float(table.get("precompute_dt", 0.02)),
        precompute_max_iters=int(table.get("precompute_max_iters", 20000)),
        precompute_tol_task=float(table.get("precompute_tol_task", 1e-8)),
        precompute_tol_eq=float(table.get("precompute_tol_eq", 1e-8)),
        two_phase_switch=float(table.get("two_phase_switch", 0.5)),
    )


def build_sim(table: dict) -> tuple[SimConfig, float]:
    _check_keys(table, _SIM_KEYS, "sim")
    mismatch = dict(table.get("mismatch", {}))
    _check_keys(mismatch, _MISMATCH_KEYS, "sim.mismatch")
    cfg = SimConfig(
        dt=float(table.get("dt", 2e-4)),
        integrator=table.get("integrator", "rk4"),
        seed=int(table.get("seed", 0)),
        mismatch={k: float(v) for k, v in mismatch.items()},
        mocap_noise=float(table.get("mocap_noise", 0.0)),
    )
    log_dt = float(table.get("log_dt", table.get("dt", 2e-4)))
    return cfg, log_dt


@dataclass(frozen=True)
class ScenarioSpec:
    """Parsed scenario bundle: model, controllers, integrator, task."""

    model: RobotModel
    control_table: dict
    sim: SimConfig
    log_dt: float
    kind: str
    markers: tuple
    selector: tuple
    active: tuple  # zero-based tendon indices
    bands: tuple
    workspace_box: tuple
    points: tuple  # base task points (kind builders expand these)
    targets: tuple  # explicit (x, window, mode) triples for kind = custom
    phase_windows: tuple
    phase_modes: tuple
    phase_repeats: tuple
    pendulum: dict
    initial_settle: float

    def control_config(self) -> ControlConfig:
        return build_control(
            self.control_table, len(self.active), len(self.selector), self.model.n
        )


_DEFAULT_BANDS = (0.005, 0.010, 0.030)
_DEFAULT_BOX = ((-0.4, 0.4), (-0.4, 0.4), (-0.45, 0.45))
_KINDS = ("coiling2d", "triangle4d", "pendulum_strike", "custom")


def load_scenario(source) -> ScenarioSpec:
    """Parse a scenario bundle from a TOML path or a pre-parsed dict."""
    raw = source if isinstance(source, dict) else load_toml(source)
    _check_keys(raw, _TOP_KEYS, "top level")
    model = build_model(dict(raw.get("model", {})))
    sim_cfg, log_dt = build_sim(dict(raw.get("sim", {})))
    sc = dict(raw.get("scenario", {}))
    _check_keys(sc, _SCENARIO_KEYS, "scenario")
    kind = sc.get("kind", "custom")
    if kind not in _KINDS:
        raise ConfigError(f"unknown scenario kind {kind!r}; expected one of {_KINDS}")

    markers = tuple(float(v) for v in sc.get("markers", (model.geometry.length,)))
    selector = tuple((int(mi), str(ax)) for mi, ax in sc.get("selector", [[0, "x"], [0, "y"], [0, "z"]]))
    ids = sc.get("active_tendons", list(range(1, model.n_tendons + 1)))
    active = tuple(int(i) - 1 for i in ids)
    if any(not 0 <= k < model.n_tendons for k in active):
        raise ConfigError(f"active_tendons {ids} out of range 1..{model.n_tendons}")
    if len(active) != len(selector):
        raise ConfigError(
            f"scenario needs as many task coordinates as active tendons "
            f"(got {len(selector)} vs {len(active)})"
        )
    bands = tuple(sorted((float(b) for b in sc.get("bands", _DEFAULT_BANDS)), reverse=True))
    box = tuple(tuple(float(v) for v in pair) for pair in sc.get("workspace_box", _DEFAULT_BOX))

    points = []
    for i, p in enumerate(sc.get("points", [])):
        _check_keys(p, _POINT_KEYS, f"scenario.points[{i}]")
        points.append(tuple(float(v) for v in p["x"]))
    targets = []
    for i, tgt in enumerate(sc.get("targets", [])):
        _check_keys(tgt, _TARGET_KEYS, f"scenario.targets[{i}]")
        targets.append((
            tuple(float(v) for v in tgt["x"]),
            float(tgt.get("window", 15.0)),
            str(tgt.get("mode", "two_phase")),
        ))
    pend = dict(sc.get("pendulum", {}))
    _check_keys(pend, _PENDULUM_KEYS, "scenario.pendulum")

    return ScenarioSpec(
        model=model,
        control_table=dict(raw.get("control", {})),
        sim=sim_cfg,
        log_dt=log_dt,
        kind=kind,
        markers=markers,
        selector=selector,
        active=active,
        bands=bands,
        workspace_box=box,
        points=tuple(points),
        targets=tuple(targets),
        phase_windows=tuple(float(v) for v in sc.get("phase_windows", (15.0, 5.0, 1.0))),
        phase_modes=tuple(sc.get("phase_modes", ("two_phase", "replay", "replay"))),
        phase_repeats=tuple(int(v) for v in sc.get("phase_repeats", (1, 1, 1))),
        pendulum=pend,
        initial_settle=float(sc.get("initial_settle", 0.0)),
    )


def apply_overrides(spec_path, overrides: dict):
    """Reload a scenario with dotted-path value overrides (CLI sweeps)."""
    raw = load_toml(spec_path)
    for dotted, value in overrides.items():
        node = raw
        parts = dotted.split(".")
        for key in parts[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {dotted!r} crosses a non-table")
        node[parts[-1]] = value
    return raw
