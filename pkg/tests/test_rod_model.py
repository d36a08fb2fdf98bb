import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.polynomial import legendre

from strainsim import kinematics as kin
from strainsim.errors import ConfigError, DomainError
from strainsim.model import RobotModel, RodGeometry, StrainBasis

from conftest import draw_q

L = 0.38


def single_mode_model(component="bend_x", degree=0, cylinder=False, **geo_kwargs):
    degrees = {c: -1 for c in ("bend_x", "bend_y", "torsion", "axial", "shear_x", "shear_y")}
    degrees[component] = degree
    if cylinder:
        geo_kwargs.setdefault("base_radius", 0.016)
        geo_kwargs.setdefault("tip_radius", 0.016)
    geometry = RodGeometry(**geo_kwargs)
    basis = StrainBasis(length=geometry.length, degrees=degrees)
    return RobotModel(geometry=geometry, basis=basis)


def test_geometry_validation():
    with pytest.raises(ConfigError):
        RodGeometry(length=-1.0)
    with pytest.raises(ConfigError):
        RodGeometry(base_radius=0.001, tip_radius=0.002)


def test_default_basis_size(model):
    # degree-major columns over (bend_x 2, bend_y 2, torsion 1, axial 0)
    assert model.n == 9
    rows = [row for row, _ in model.basis.columns]
    assert rows[:4] == [0, 1, 2, 5]


def test_eval_strain_reference(model):
    xi = kin.eval_strain(model, np.zeros(model.n), 0.2)
    assert np.allclose(xi, [0, 0, 0, 0, 0, 1])


def test_eval_strain_constant_curvature_mode():
    m = single_mode_model("bend_x", 0)
    kappa = 3.0
    xi = kin.eval_strain(m, np.array([kappa]), 0.17)
    assert np.allclose(xi, [kappa, 0, 0, 0, 0, 1])


def test_eval_strain_linear_axial_polynomial_oracle(rng):
    m = single_mode_model("axial", 1)
    q = rng.normal(size=2)
    for X in rng.uniform(0, L, 5):
        u = 2 * X / L - 1
        expected = 1.0 + q[0] * 1.0 + q[1] * u  # shifted Legendre P0, P1
        assert abs(kin.eval_strain(m, q, X)[5] - expected) < 1e-14


def test_eval_strain_domain_error(model):
    with pytest.raises(DomainError):
        kin.eval_strain(model, np.zeros(model.n), L + 0.01)


def test_strain_linearity(model, rng):
    q1 = draw_q(rng, model)
    q2 = draw_q(rng, model)
    X = np.array([0.05, 0.2, 0.37])
    xi0 = model.basis.reference(X)
    a = kin.eval_strain(model, q1 + q2, X) - xi0
    b = (kin.eval_strain(model, q1, X) - xi0) + (kin.eval_strain(model, q2, X) - xi0)
    assert np.abs(a - b).max() < 1e-12


def test_frozen_component_rigidity(model, rng):
    q = draw_q(rng, model, scale=1.0)
    xi = kin.eval_strain(model, q, np.linspace(0, L, 7))
    assert np.abs(xi[:, 3:5]).max() == 0.0  # shear frozen at reference


def test_fk_straight_rod(model):
    for X in (0.1, 0.25, L):
        g = kin.forward_kinematics(model, np.zeros(model.n), X)
        assert np.allclose(g.position, [0, 0, X], atol=1e-15)
        assert np.allclose(g.rotation, np.eye(3), atol=1e-15)


def analytic_arc_tip(kappa, X):
    return np.array([0.0, -(1 - np.cos(kappa * X)) / kappa, np.sin(kappa * X) / kappa])


def test_fk_constant_curvature_arc():
    m = single_mode_model("bend_x", 0)
    kappa = np.pi / L
    tip = kin.forward_kinematics(m, np.array([kappa]), L, subintervals=64)
    assert np.abs(tip.position - analytic_arc_tip(kappa, L)).max() < 1e-8


def test_fk_richardson_self_convergence(model, rng):
    for _ in range(3):
        q = draw_q(rng, model, scale=1.0)
        a = kin.forward_kinematics(model, q, L, subintervals=64).position
        b = kin.forward_kinematics(model, q, L, subintervals=128).position
        assert np.abs(a - b).max() < 1e-8


def test_jacobian_zero_velocity(model, rng):
    q = draw_q(rng, model)
    J = kin.body_jacobian(model, q, 0.3)
    assert np.allclose(J @ np.zeros(model.n), 0.0)


def test_jacobian_clamped_base(model, rng):
    q = draw_q(rng, model)
    assert np.array_equal(kin.body_jacobian(model, q, 0.0), np.zeros((6, model.n)))


def _fd_body_jacobian(model, q, X, eps=1e-6):
    g0 = kin.forward_kinematics(model, q, X).as_matrix()
    J = np.zeros((6, model.n))
    for i in range(model.n):
        dq = np.zeros(model.n)
        dq[i] = eps
        gp = kin.forward_kinematics(model, q + dq, X).as_matrix()
        gm = kin.forward_kinematics(model, q - dq, X).as_matrix()
        xh = np.linalg.solve(g0, (gp - gm) / (2 * eps))
        J[:, i] = [xh[2, 1], xh[0, 2], xh[1, 0], xh[0, 3], xh[1, 3], xh[2, 3]]
    return J


def test_jacobian_vs_finite_differences(model, rng):
    for _ in range(10):
        q = draw_q(rng, model)
        X = rng.uniform(0.05, L)
        J = kin.body_jacobian(model, q, X)
        Jfd = _fd_body_jacobian(model, q, X)
        assert np.abs(J - Jfd).max() / np.abs(J).max() < 1e-5


def test_task_map_straight(model):
    x = kin.task_map(model, np.zeros(model.n), (L,), ((0, "x"), (0, "y"), (0, "z")))
    assert np.allclose(x, [0, 0, L])


def test_task_map_four_dim_selector(model):
    sel = ((0, "x"), (0, "y"), (0, "z"), (1, "y"))
    x = kin.task_map(model, np.zeros(model.n), (L, 0.33), sel)
    assert x.shape == (4,)


def test_task_map_matches_forward_kinematics(model, rng):
    q = draw_q(rng, model)
    sel = ((0, "x"), (0, "y"), (0, "z"), (1, "y"))
    x = kin.task_map(model, q, (L, 0.33), sel)
    tip = kin.forward_kinematics(model, q, L).position
    marker = kin.forward_kinematics(model, q, 0.33).position
    assert np.allclose(x, [tip[0], tip[1], tip[2], marker[1]], atol=1e-14)


def test_task_map_bad_selector(model):
    with pytest.raises(ConfigError):
        kin.task_map(model, np.zeros(model.n), (L,), ((0, "w"),))
    with pytest.raises(ConfigError):
        kin.task_map(model, np.zeros(model.n), (L,), ((3, "x"),))


def test_task_jacobian_vs_fd(model, rng):
    q = draw_q(rng, model)
    sel = ((0, "x"), (0, "y"), (0, "z"), (1, "y"))
    markers = (L, 0.33)
    Jt = kin.task_jacobian(model, q, markers, sel)
    eps = 1e-6
    for i in range(model.n):
        dq = np.zeros(model.n)
        dq[i] = eps
        fd = (kin.task_map(model, q + dq, markers, sel) - kin.task_map(model, q - dq, markers, sel)) / (2 * eps)
        assert np.abs(Jt[:, i] - fd).max() < 1e-6


def test_batched_evaluation_matches_loop(model, rng):
    Q = np.stack([draw_q(rng, model) for _ in range(4)])
    xb = kin.task_map(model, Q, (L,), ((0, "x"), (0, "y"), (0, "z")))
    for k in range(4):
        assert np.allclose(xb[k], kin.task_map(model, Q[k], (L,), ((0, "x"), (0, "y"), (0, "z"))))


def test_model_rejects_mismatched_basis_length():
    with pytest.raises(ConfigError):
        RobotModel(basis=StrainBasis(length=0.5))
