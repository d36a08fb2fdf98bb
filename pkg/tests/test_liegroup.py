import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from strainsim import liegroup as lg

finite_twists = st.lists(
    st.floats(-5.0, 5.0, allow_nan=False), min_size=6, max_size=6
).map(np.asarray)


def test_hat_zero_twist():
    assert np.array_equal(lg.hat(np.zeros(6)), np.zeros((4, 4)))


def test_hat_canonical_basis():
    H = lg.hat(np.array([0.0, 0.0, 1.0, 0.0, 0.0, 0.0]))
    expected = np.zeros((4, 4))
    expected[:3, :3] = [[0, -1, 0], [1, 0, 0], [0, 0, 0]]
    assert np.array_equal(H, expected)
    assert np.array_equal(H[3], np.zeros(4))


def test_hat_skew_block_structure(rng):
    v = rng.normal(size=6)
    H = lg.hat(v)
    assert np.allclose(H[:3, :3], -H[:3, :3].T)
    assert np.array_equal(H[:3, 3], v[3:])


def test_exp_identity():
    g = lg.exp_se3(np.zeros(6), 0.7)
    assert np.allclose(g.rotation, np.eye(3))
    assert np.allclose(g.position, 0.0)


def test_exp_pure_translation():
    g = lg.exp_se3(np.array([0.0, 0.0, 0.0, 0.0, 0.0, 1.0]), 0.38)
    assert np.allclose(g.rotation, np.eye(3))
    assert np.allclose(g.position, [0.0, 0.0, 0.38])


def test_exp_matches_series_oracle():
    # truncated matrix-exponential series, 30 terms
    kappa = np.pi / 0.38
    v = np.array([kappa, 0.0, 0.0, 0.0, 0.0, 1.0])
    h = 0.05
    H = lg.hat(v) * h
    series = np.eye(4)
    term = np.eye(4)
    for m in range(1, 30):
        term = term @ H / m
        series = series + term
    g = lg.exp_se3(v, h).as_matrix()
    assert np.abs(g - series).max() < 1e-14


def test_exp_small_angle_fallback(rng):
    v = np.concatenate([rng.normal(size=3) * 1e-10, rng.normal(size=3)])
    g = lg.exp_se3(v, 1.0)
    assert np.allclose(g.rotation @ g.rotation.T, np.eye(3), atol=1e-14)
    assert np.allclose(g.position, v[3:], atol=1e-9)


def test_adjoint_big_identity():
    assert np.array_equal(lg.adjoint_big(lg.Pose.identity()), np.eye(6))


def test_adjoint_small_bracket_with_itself(rng):
    v = rng.normal(size=6)
    assert np.allclose(lg.adjoint_small(v) @ v, 0.0, atol=1e-15)


def test_adjoint_composition(rng):
    for _ in range(10):
        g1 = lg.exp_se3(rng.normal(size=6))
        g2 = lg.exp_se3(rng.normal(size=6))
        lhs = lg.adjoint_big(g1.compose(g2))
        rhs = lg.adjoint_big(g1) @ lg.adjoint_big(g2)
        assert np.abs(lhs - rhs).max() < 1e-12


def test_adjoint_inv_consistent(rng):
    g = lg.exp_se3(rng.normal(size=6))
    assert np.allclose(lg.adjoint_inv(g) @ lg.adjoint_big(g), np.eye(6), atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(finite_twists, st.floats(0.0, 1.0))
def test_exponential_orthonormality_property(v, h):
    norm = np.linalg.norm(v)
    if norm < 1e-12:
        return
    g = lg.exp_se3(v / norm, h)
    R = g.rotation
    assert np.abs(R @ R.T - np.eye(3)).max() < 1e-10
    assert abs(np.linalg.det(R) - 1.0) < 1e-10


@settings(max_examples=25, deadline=None)
@given(finite_twists)
def test_exp_derivative_at_zero_is_hat(v):
    eps = 1e-6
    gp = lg.exp_se3(v, eps).as_matrix()
    gm = lg.exp_se3(v, -eps).as_matrix()
    fd = (gp - gm) / (2 * eps)
    assert np.abs(fd - lg.hat(v)).max() < 1e-6 * max(1.0, np.linalg.norm(v) ** 2)


@settings(max_examples=25, deadline=None)
@given(finite_twists, st.floats(0.0, 1.0))
def test_adjoint_of_exponential_matches_matrix_exponential(v, h):
    lhs = lg.adjoint_big(lg.exp_se3(v, h))
    rhs = scipy.linalg.expm(h * lg.adjoint_small(v))
    assert np.abs(lhs - rhs).max() < 1e-8


def test_tangent_operator_is_exp_derivative(rng):
    w = rng.normal(size=6) * 0.3
    wd = rng.normal(size=6)
    eps = 1e-7
    gp = lg.exp_se3(w + eps * wd).as_matrix()
    gm = lg.exp_se3(w - eps * wd).as_matrix()
    lhs = np.linalg.solve(lg.exp_se3(w).as_matrix(), (gp - gm) / (2 * eps))
    assert np.abs(lhs - lg.hat(lg.tangent_operator(w) @ wd)).max() < 1e-8


def test_tangent_operator_pair_consistency(rng):
    w = rng.normal(size=6) * 0.4
    wd = rng.normal(size=6)
    T, DT = lg.tangent_operator_pair(w, wd)
    assert np.allclose(T, lg.tangent_operator(w))
    eps = 1e-7
    fd = (lg.tangent_operator(w + eps * wd) - lg.tangent_operator(w - eps * wd)) / (2 * eps)
    assert np.abs(DT - fd).max() < 1e-7


def test_coadjoint_map_identity(rng):
    a = rng.normal(size=6)
    p = rng.normal(size=6)
    assert np.allclose(lg.coadjoint_map(p) @ a, lg.adjoint_small(a).T @ p, atol=1e-14)
    Q = lg.coadjoint_map(p)
    assert np.allclose(Q, -Q.T)
