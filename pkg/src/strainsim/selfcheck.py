"""Built-in invariant suite behind `strainsim check`.

A fast, dependency-free subset of the test suite: each check prints one
PASS/FAIL line; the CLI exits nonzero if any check fails.
"""

from __future__ import annotations

import numpy as np

from . import actuation, collocated, control, dynamics, kinematics, liegroup, sim
from .model import RobotModel


def _random_q(model, rng, scale=0.4):
    spread = np.array([8, 8, 3, 0.05, 4, 4, 2, 2, 2], dtype=float)
    if spread.shape[0] != model.n:
        spread = np.full(model.n, 2.0)
    return rng.normal(size=model.n) * spread * scale


def run_selfcheck(fast: bool = False, printer=print) -> list[str]:
    failures = []

    def check(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}"
        if detail:
            line += f"  ({detail})"
        printer(line)
        if not ok:
            failures.append(name)

    rng = np.random.default_rng(0)
    model = RobotModel()
    n = model.n

    v = rng.normal(size=(64, 6))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    h = rng.uniform(0, 1, 64)
    g = liegroup.exp_se3(v, 1.0)
    R = liegroup.exp_se3(v * h[:, None]).rotation
    err = np.abs(R @ np.swapaxes(R, -1, -2) - np.eye(3)).max()
    check("exponential orthonormality", err < 1e-10, f"residual {err:.1e}")

    g1 = liegroup.exp_se3(rng.normal(size=6))
    g2 = liegroup.exp_se3(rng.normal(size=6))
    err = np.abs(liegroup.adjoint_big(g1.compose(g2))
                 - liegroup.adjoint_big(g1) @ liegroup.adjoint_big(g2)).max()
    check("adjoint composition", err < 1e-8, f"residual {err:.1e}")

    q = _random_q(model, rng)
    qd = rng.normal(size=n)
    X = 0.31
    J = kinematics.body_jacobian(model, q, X)
    eps = 1e-6
    g0 = kinematics.forward_kinematics(model, q, X).as_matrix()
    worst = 0.0
    for i in range(n):
        dq = np.zeros(n)
        dq[i] = eps
        gp = kinematics.forward_kinematics(model, q + dq, X).as_matrix()
        gm = kinematics.forward_kinematics(model, q - dq, X).as_matrix()
        xh = np.linalg.solve(g0, (gp - gm) / (2 * eps))
        col = np.array([xh[2, 1], xh[0, 2], xh[1, 0], xh[0, 3], xh[1, 3], xh[2, 3]])
        worst = max(worst, np.abs(col - J[:, i]).max())
    rel = worst / np.abs(J).max()
    check("jacobian vs finite differences", rel < 1e-5, f"rel {rel:.1e}")

    M = dynamics.mass_matrix(model, q)
    eigs = np.linalg.eigvalsh(M)
    check("mass matrix SPD", eigs.min() > 0, f"min eig {eigs.min():.1e}")

    C = dynamics.coriolis_matrix(model, q, qd)
    Mdot = (dynamics.mass_matrix(model, q + 1e-6 * qd) - dynamics.mass_matrix(model, q - 1e-6 * qd)) / 2e-6
    z = rng.normal(size=n)
    res = abs(z @ (Mdot - 2 * C) @ z) / (z @ z * max(np.linalg.norm(qd), 1e-12))
    check("power-balance skew symmetry", res < 1e-7, f"residual {res:.1e}")

    ev = actuation.actuation_eval(model, q)
    check("actuation coordinates below lengths", bool(np.all(ev.coordinates <= ev.lengths + 1e-15)))

    model0 = model.with_updates(friction_scale=0.0)
    ev0 = actuation.actuation_eval(model0, q)
    dL = np.zeros((model.n_tendons, n))
    for i in range(n):
        dq = np.zeros(n)
        dq[i] = eps
        dL[:, i] = (actuation.tendon_length(model0, q + dq) - actuation.tendon_length(model0, q - dq)) / (2 * eps)
    rel = np.abs(ev0.A.T - dL).max() / np.abs(dL).max()
    check("frictionless integrability", rel < 1e-4, f"rel {rel:.1e}")

    tr = collocated.jacobian_h(model, np.zeros(n))
    A0 = actuation.actuation_matrix(model, np.zeros(n))
    At = tr.inverse.T @ A0
    na = model.n_tendons
    err = max(np.abs(At[:na] - np.eye(na)).max(), np.abs(At[na:]).max())
    check("collocated input matrix is [I; 0]", err < 1e-10, f"residual {err:.1e}")
    check("collocated transform conditioning", tr.cond < 1e10, f"cond {tr.cond:.1e}")

    if not fast:
        q_eq = sim.solve_static_equilibrium(model, None)
        r = np.linalg.norm(q_eq @ model.stiffness + dynamics.gravity_vector(model, q_eq))
        check("static equilibrium residual", r < 1e-10, f"residual {r:.1e}")
        gu = np.linalg.norm(collocated.g_theta_u(model, q_eq))
        check("equilibrium set membership", gu < 1e-8, f"residual {gu:.1e}")

        markers = (model.geometry.length,)
        selector = ((0, "x"), (0, "y"), (0, "z"))
        active = (1, 2, 3)
        u = np.zeros(model.n_tendons)
        u[2] = -1.5
        q_t = sim.solve_static_equilibrium(model, u, q0=q_eq)
        x_d = kinematics.task_map(model, q_t, markers, selector)
        der = control.clik_derivatives(model, q_eq, active, markers, selector)
        P_eps, P_Z = control.clik_projectors(model, q_eq, active, markers, selector, derivatives=der)
        r1 = np.linalg.norm(der.J_task @ P_Z) / np.linalg.norm(der.J_task)
        r2 = np.linalg.norm(der.J_eq @ P_eps) / np.linalg.norm(der.J_eq)
        check("projector decoupling", max(r1, r2) < 1e-8, f"residuals {r1:.1e}/{r2:.1e}")

    return failures
