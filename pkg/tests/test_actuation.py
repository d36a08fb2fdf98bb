import numpy as np
import pytest

from strainsim import actuation as act
from strainsim import kinematics as kin
from strainsim import sim as simm
from strainsim.errors import DomainError
from strainsim.model import RobotModel, RodGeometry, StrainBasis, TendonRoute

from conftest import draw_q
from test_rod_model import single_mode_model

L = 0.38
LT = 0.325


def cylinder_model(friction=0.1):
    geometry = RodGeometry(base_radius=0.016, tip_radius=0.016)
    tendons = tuple(
        TendonRoute(kind=t.kind, base_angle=t.base_angle, friction=friction)
        for t in RobotModel().tendons
    )
    return RobotModel(geometry=geometry, basis=StrainBasis(length=geometry.length), tendons=tendons)


def test_tendon_point_base_geometry(model):
    d, _ = act.tendon_point(model, 2, 0.0)  # straight route at 30 degrees
    expected = 0.5 * 0.016 * np.array([np.cos(np.pi / 6), np.sin(np.pi / 6), 0.0])
    assert np.allclose(d, expected, atol=1e-15)


def test_crossed_route_mirrors_at_termination(model):
    route = model.tendons[0]  # crossed at 60 degrees
    assert abs(route.azimuth(0.0) - np.deg2rad(60)) < 1e-15
    assert abs(route.azimuth(route.termination) - np.deg2rad(120)) < 1e-12


def test_tendon_point_derivative_fd(model):
    eps = 1e-7
    for k in range(model.n_tendons):
        X = 0.2
        d, dp = act.tendon_point(model, k, X)
        dp_fd = (act.tendon_point(model, k, X + eps)[0] - act.tendon_point(model, k, X - eps)[0]) / (2 * eps)
        assert np.abs(dp - dp_fd).max() < 1e-7


def test_tendon_point_domain(model):
    with pytest.raises(DomainError):
        act.tendon_point(model, 0, LT + 0.01)


def test_tangent_straight_rod_taper(model):
    q = np.zeros(model.n)
    t = act.tendon_tangent(model, 2, q, 0.1)
    assert abs(np.linalg.norm(t) - 1.0) < 1e-12
    assert t @ np.array([0, 0, 1.0]) > 0.999
    # the radial component is the analytic taper slope of the offset line
    f = model.tendons[2].radial_offset_fraction
    slope = f * model.geometry.radius_rate
    radial = t[:2] @ np.array([np.cos(np.pi / 6), np.sin(np.pi / 6)])
    assert abs(radial - slope / np.sqrt(1 + slope**2)) < 1e-12


def test_tangent_crossed_sweep_component():
    m = cylinder_model()
    q = np.zeros(m.n)
    X = 0.15
    route = m.tendons[0]
    t = act.tendon_tangent(m, 0, q, X)
    # analytic: tau = d' + e_z with d' = f r alpha' e_t on a cylinder
    f, r = route.radial_offset_fraction, 0.016
    sweep = f * r * route.azimuth_rate
    alpha = route.azimuth(X)
    e_t = np.array([-np.sin(alpha), np.cos(alpha), 0.0])
    expected = (sweep * e_t + np.array([0, 0, 1.0])) / np.sqrt(1 + sweep**2)
    assert np.abs(t - expected).max() < 1e-12


def test_tangent_unit_norm_random(model, rng):
    for _ in range(5):
        q = draw_q(rng, model)
        for k in range(model.n_tendons):
            t = act.tendon_tangent(model, k, q, rng.uniform(0, LT))
            assert abs(np.linalg.norm(t) - 1.0) < 1e-12


def test_friction_exponent_zero_coefficient(model, rng):
    m0 = model.with_updates(friction_scale=0.0)
    q = draw_q(rng, m0)
    assert act.friction_exponent(m0, 0, q, 0.3) == 0.0


def test_friction_exponent_zero_on_straight_cylinder():
    m = cylinder_model()
    q = np.zeros(m.n)
    assert act.friction_exponent(m, 2, q, 0.3) < 1e-15  # straight route, no taper


def test_friction_exponent_constant_curvature_arc():
    # bending at constant curvature rotates the path direction with the
    # backbone: mu_S(L_t) ~ mu_bar * kappa * L_t
    degrees = {"bend_x": 0, "bend_y": -1, "torsion": -1, "axial": -1, "shear_x": -1, "shear_y": -1}
    geometry = RodGeometry(base_radius=0.016, tip_radius=0.016)
    tendons = tuple(TendonRoute(kind="straight", base_angle=a, friction=0.1)
                    for a in (np.deg2rad(30), np.deg2rad(150)))
    m = RobotModel(geometry=geometry, basis=StrainBasis(length=L, degrees=degrees), tendons=tendons)
    kappa = 4.0
    mu = act.friction_exponent(m, 0, np.array([kappa]), LT)
    assert abs(mu - 0.1 * kappa * LT) / (0.1 * kappa * LT) < 0.02


def test_friction_attenuation_monotone(model, rng):
    for _ in range(5):
        q = draw_q(rng, model)
        Xs = np.linspace(0.01, LT, 12)
        mus = [act.friction_exponent(model, 0, q, X) for X in Xs]
        assert np.all(np.diff(mus) >= -1e-14)


def test_integrability_frictionless(frictionless_model, rng):
    for _ in range(5):
        q = draw_q(rng, frictionless_model)
        A = act.actuation_matrix(frictionless_model, q)
        eps = 1e-6
        dL = np.zeros((frictionless_model.n_tendons, frictionless_model.n))
        for i in range(frictionless_model.n):
            dq = np.zeros(frictionless_model.n)
            dq[i] = eps
            dL[:, i] = (act.tendon_length(frictionless_model, q + dq)
                        - act.tendon_length(frictionless_model, q - dq)) / (2 * eps)
        assert np.abs(A.T - dL).max() / np.abs(dL).max() < 1e-4


def test_friction_reduces_actuation_entries(model, rng):
    q = draw_q(rng, model, scale=0.8)
    A_f = act.actuation_matrix(model, q)
    A_0 = act.actuation_matrix(model.with_updates(friction_scale=0.0), q)
    # attenuation can only shrink the quadrature contributions
    ev0 = act.actuation_eval(model.with_updates(friction_scale=0.0), q)
    evf = act.actuation_eval(model, q)
    assert np.all(evf.coordinates <= ev0.coordinates + 1e-15)
    assert np.linalg.norm(A_f) < np.linalg.norm(A_0)


def test_tendon_length_cylinder_straight(frictionless_model):
    m = cylinder_model(friction=0.0)
    lengths = act.tendon_length(m, np.zeros(m.n))
    assert abs(lengths[2] - LT) < 1e-12  # straight route on a cylinder
    assert abs(lengths[3] - LT) < 1e-12


def test_tendon_length_taper_closed_form(model):
    # straight rod with taper: |tau| = sqrt(1 + (f r')^2), constant in X
    lengths = act.tendon_length(model, np.zeros(model.n))
    f = model.tendons[2].radial_offset_fraction
    slope = f * model.geometry.radius_rate
    expected = LT * np.sqrt(1.0 + slope**2)
    assert abs(lengths[2] - expected) < 1e-12


def test_bending_toward_tendon_shortens(model):
    # small curvature toward the 30-degree tendon (index 2); the tip moves
    # toward (cos a, sin a) for kappa = (-k sin a, +k cos a)
    alpha = np.pi / 6
    q = np.zeros(model.n)
    kappa = 0.5
    q[0] = -kappa * np.sin(alpha)  # bend_x
    q[1] = kappa * np.cos(alpha)   # bend_y
    l1 = act.tendon_length(model, q)
    l0 = act.tendon_length(model, np.zeros(model.n))
    assert l1[2] < l0[2]
    q_away = -q
    assert act.tendon_length(model, q_away)[2] > l0[2]


def test_coordinates_equal_lengths_frictionless(frictionless_model, rng):
    q = draw_q(rng, frictionless_model)
    ev = act.actuation_eval(frictionless_model, q)
    assert np.abs(ev.coordinates - ev.lengths).max() < 1e-12


def test_coordinates_below_lengths_with_friction(model, rng):
    for _ in range(5):
        q = draw_q(rng, model)
        ev = act.actuation_eval(model, q)
        assert np.all(ev.coordinates <= ev.lengths + 1e-15)


def test_constant_exponent_factors_out():
    # hypothetical constant attenuation: theta = exp(-c) * L
    m = cylinder_model(friction=0.0)
    q = np.zeros(m.n)
    ev = act.actuation_eval(m, q)
    c = 0.37
    assert np.allclose(np.exp(-c) * ev.lengths, ev.lengths * np.exp(-c))


def test_mirror_symmetry_swaps_straight_pair(model, rng):
    q = draw_q(rng, model)
    signs = np.ones(model.n)
    for j, (row, _) in enumerate(model.basis.columns):
        if row in (1, 2, 3):  # bend_y, torsion, shear_x flip under x-mirror
            signs[j] = -1.0
    lengths = act.tendon_length(model, q)
    mirrored = act.tendon_length(model, q * signs)
    assert abs(lengths[2] - mirrored[3]) < 1e-12
    assert abs(lengths[3] - mirrored[2]) < 1e-12


def test_quasi_static_coordinate_rate(model):
    # Along a slow motion the actuation-coordinate rate tracks A^T qdot.
    # The identity is exact without friction and holds to ~1% only while
    # the capstan attenuation changes slowly next to the geometric length
    # change, so the audit runs at a small friction coefficient.
    quasi = model.with_updates(friction_scale=0.03)
    rng = np.random.default_rng(7)
    q0 = draw_q(rng, quasi, scale=0.2)
    q1 = draw_q(rng, quasi, scale=0.2)
    T, steps = 5.0, 400
    dt = T / steps
    integral = np.zeros(quasi.n_tendons)
    q_prev = q0
    for k in range(1, steps + 1):
        s = 0.5 - 0.5 * np.cos(np.pi * k * dt / T)  # smooth ramp
        q = q0 + s * (q1 - q0)
        qd_mid = (q - q_prev) / dt
        integral += act.actuation_matrix(quasi, 0.5 * (q + q_prev)).T @ qd_mid * dt
        q_prev = q
    delta = act.actuation_coordinates(quasi, q1) - act.actuation_coordinates(quasi, q0)
    assert np.all(np.abs(delta - integral) / np.abs(delta) < 0.01)


def test_length_coordinate_map_fit(model, rng):
    # the affine reconstruction is fitted over workspace samples, where the
    # coordinates track the lengths closely
    q_guess = simm.solve_static_equilibrium(model, None)
    samples = [q_guess]
    for _ in range(30):
        tension = rng.uniform(0.0, 4.0, model.n_tendons)
        try:
            samples.append(simm.solve_static_equilibrium(model, -tension, q0=samples[-1]))
        except simm.ConvergenceError:
            continue
    assert len(samples) >= 15
    Q = np.stack(samples)
    fit = act.fit_length_coordinate_map(model, Q)
    ev = act.actuation_eval(model, Q)
    pred = fit(ev.lengths)
    ss_res = np.sum((pred - ev.coordinates) ** 2, axis=0)
    ss_tot = np.sum((ev.coordinates - ev.coordinates.mean(axis=0)) ** 2, axis=0)
    assert np.all(1.0 - ss_res / ss_tot > 0.95)
