"""Acceptance gate: one test per headline claim, one printed verdict line each."""
import time

import numpy as np
import pytest

from hovic import quadrature as quad
from hovic.adjoint import commutation_check
from hovic.errors import SingularKkt
from hovic.integrators import (SchemeKind, StepperConfig, integrate,
                               make_stepper, measure_order, sg_step, sprk_step,
                               verlet_reference_step)
from hovic.mechanics import builtin_models, hager_exact
from hovic.ocp import NONCOERCIVE_VARIANTS, hager_ocp, solve_kkt, transcribe

MODELS = builtin_models()


def _verdict(num, name, ok, detail):
    line = f"criterion {num} ({name}): {'PASS' if ok else 'FAIL'} [{detail}]"
    print(line)
    assert ok, line


def test_criterion_1_verlet_equivalence():
    t0 = time.time()
    system = MODELS["harmonic"].system
    scheme = quad.make_scheme("lobatto", 2)
    rng = np.random.default_rng(1)
    h = 0.1
    max_dev = 0.0
    for _ in range(100):
        q0 = rng.uniform(-1.0, 1.0, 1)
        p0 = rng.uniform(-1.0, 1.0, 1)
        qv, pv = verlet_reference_step(system, q0, p0, h)
        U = np.zeros((2, 0))
        for kind, step in ((SchemeKind.SPRK, sprk_step), (SchemeKind.SG, sg_step)):
            cfg = StepperConfig(kind=kind, scheme=scheme)
            q1, p1, _ = step(system, cfg, q0, p0, U, h)
            max_dev = max(max_dev, float(np.max(np.abs(q1 - qv))),
                          float(np.max(np.abs(p1 - pv))))
    ok = max_dev <= 1e-10 and time.time() - t0 < 1.0
    _verdict(1, "Verlet equivalence", ok, f"max_dev={max_dev:.2e}")


def test_criterion_2_order_reproduction():
    t0 = time.time()
    h_list = [0.2, 0.1, 0.05, 0.025]
    gated = [
        (SchemeKind.SPRK, "gauss", 2, 4.0),
        (SchemeKind.SPRK, "radau", 2, 3.0),
        (SchemeKind.SPRK, "lobatto", 3, 4.0),
        (SchemeKind.SG, "gauss", 3, 4.0),
        (SchemeKind.SG, "lobatto", 3, 4.0),
    ]
    prob = MODELS["harmonic"]
    details = []
    ok = True
    for kind, family, s, target in gated:
        cfg = StepperConfig(kind=kind, scheme=quad.make_scheme(family, s))
        slope, _ = measure_order(prob, cfg, h_list, 2.0)
        details.append(f"{kind.value}/{family}{s}={slope:.2f}")
        ok = ok and abs(slope - target) <= 0.3
    for kind in (SchemeKind.SPRK, SchemeKind.SG):  # reported, not gated
        cfg = StepperConfig(kind=kind, scheme=quad.make_scheme("chebyshev", 3))
        slope, _ = measure_order(prob, cfg, h_list, 2.0)
        details.append(f"{kind.value}/chebyshev3={slope:.2f} (ungated)")
    ok = ok and time.time() - t0 < 30.0
    _verdict(2, "order reproduction", ok, ", ".join(details))


def test_criterion_3_hager_primal_convergence():
    t0 = time.time()
    qx, ux, _ = hager_exact(1.0)
    Ns = [8, 16, 32, 64]
    q_errs, u_errs = [], []
    c = quad.make_scheme("lobatto", 3).c
    for N in Ns:
        sol = solve_kkt(transcribe(hager_ocp(T=1.0, N=N, variant="c3t3")))
        tt = np.linspace(0.0, 1.0, N + 1)
        q_errs.append(float(np.max(np.abs(sol.q[:, 0] - qx(tt)))))
        h = 1.0 / N
        u_errs.append(max(abs(float(sol.U_stage[k, i, 0]) - ux((k + c[i]) * h))
                          for k in range(N) for i in range(3)))
    q_slope = -np.polyfit(np.log(Ns), np.log(q_errs), 1)[0]
    u_slope = -np.polyfit(np.log(Ns), np.log(u_errs), 1)[0]
    ok = (all(b < a for a, b in zip(q_errs, q_errs[1:]))
          and all(b < a for a, b in zip(u_errs, u_errs[1:]))
          and q_slope >= 3.0 and u_slope >= 2.0 and time.time() - t0 < 10.0)
    _verdict(3, "benchmark primal convergence", ok,
             f"q_slope={q_slope:.2f}, u_slope={u_slope:.2f}")


def test_criterion_4_noncoercive_failure():
    t0 = time.time()
    coercive = ["c3t3", "c3t4", "c2t2", "c2t3", "c2t4"]
    ok = True
    details = []
    for variant in sorted(NONCOERCIVE_VARIANTS):
        outcomes = []
        for N in (8, 16, 32):
            try:
                sol = solve_kkt(transcribe(hager_ocp(T=1.0, N=N, variant=variant)))
                outcomes.append(sol.diverged)
            except SingularKkt:
                outcomes.append(True)
        ok = ok and all(outcomes)
        details.append(f"{variant}=fails")
    for variant in coercive:
        bounded = []
        for N in (8, 16, 32):
            sol = solve_kkt(transcribe(hager_ocp(T=1.0, N=N, variant=variant)))
            bounded.append(not sol.diverged)
        ok = ok and all(bounded)
        details.append(f"{variant}=bounded")
    ok = ok and time.time() - t0 < 10.0
    _verdict(4, "non-coercive failure", ok, ", ".join(details))


def test_criterion_5_commutation():
    t0 = time.time()
    ok = True
    details = []
    for N in (8, 16, 32):
        rep = commutation_check(T=1.0, N=N, variant="c3t3")
        dev = max(rep.deviation_lam, rep.deviation_psi)
        ok = (ok and rep.adjoint_residual <= rep.tolerance
              and dev <= rep.tolerance and rep.roundtrip <= 1e-13)
        details.append(f"N={N}: res={rep.adjoint_residual:.1e}, dev={dev:.1e}")
    ok = ok and time.time() - t0 < 10.0
    _verdict(5, "commutation", ok, "; ".join(details))


def test_criterion_6_coefficient_identities():
    t0 = time.time()
    ok = True
    for family in quad.Family:
        smin = 2 if family in (quad.Family.GAUSS_LOBATTO, quad.Family.CHEBYSHEV) else 1
        for s in range(smin, 9):
            sc = quad.make_scheme(family, s)
            ok = ok and abs(np.sum(sc.b) - 1.0) < 1e-13
            co = quad.sprk_coefficients(sc)
            lhs = sc.b[:, None] * co.a_bar + co.b_bar[None, :] * co.a.T
            ok = ok and np.max(np.abs(lhs - np.outer(sc.b, co.b_bar))) < 1e-12
            if s >= 2:
                cg = quad.sg_coefficients(sc)
                full = sc.b[:, None] * cg.a + (cg.b_bar[:, None] * cg.a_bar).T
                ok = ok and np.max(np.abs(full)) < 1e-12
                ok = ok and abs(np.sum(cg.alpha) - 1.0) < 1e-13
                ok = ok and abs(np.sum(cg.beta) - 1.0) < 1e-13
    ref = np.array([[-3.0, 4.0, -1.0], [-1.0, 0.0, 1.0], [1.0, -4.0, 3.0]])
    a3 = quad.sg_coefficients(quad.make_scheme("lobatto", 3)).a
    ok = ok and np.max(np.abs(a3 - ref)) < 1e-12 and time.time() - t0 < 1.0
    _verdict(6, "coefficient identities", ok, "families x s=1..8")


def test_criterion_7_structure_preservation():
    t0 = time.time()
    # angular momentum over one Kepler orbit
    kep = MODELS["kepler"]
    cfg = StepperConfig(kind=SchemeKind.SPRK, scheme=quad.make_scheme("gauss", 2))
    traj = integrate(kep.system, cfg, kep.q0, kep.p0, None, 2 * np.pi, 1000)
    L = traj.q[:, 0] * traj.p[:, 1] - traj.q[:, 1] * traj.p[:, 0]
    drift = float(np.max(np.abs(L - L[0])))
    # one-step Jacobian determinant for both schemes
    harm = MODELS["harmonic"]
    det_err = 0.0
    eps = 5e-5
    for kind in (SchemeKind.SPRK, SchemeKind.SG):
        stepper = make_stepper(harm.system,
                               StepperConfig(kind=kind,
                                             scheme=quad.make_scheme("lobatto", 3),
                                             tol=1e-13))
        x0 = np.array([0.3, -0.4])

        def flow(x):
            q1, p1, _ = stepper.step(x[:1], x[1:], np.zeros((3, 0)), 0.1)
            return np.concatenate([q1, p1])

        J = np.empty((2, 2))
        for j in range(2):
            d = np.zeros(2); d[j] = eps
            J[:, j] = (flow(x0 + d) - flow(x0 - d)) / (2 * eps)
        det_err = max(det_err, abs(np.linalg.det(J) - 1.0))
    # energy drift over 1000 periods, sampled once per period
    cfg = StepperConfig(kind=SchemeKind.SPRK, scheme=quad.make_scheme("gauss", 2),
                        predictor="extrapolate")
    per = 20
    traj = integrate(harm.system, cfg, harm.q0, harm.p0, None,
                     1000 * 2 * np.pi, 1000 * per)
    E = 0.5 * (traj.q[::per, 0] ** 2 + traj.p[::per, 0] ** 2)
    slope = abs(np.polyfit(np.arange(len(E)), E, 1)[0])
    ok = (drift <= 1e-10 and det_err <= 1e-8 and slope < 1e-9
          and time.time() - t0 < 60.0)
    _verdict(7, "structure preservation", ok,
             f"ang_mom_drift={drift:.1e}, det_err={det_err:.1e}, "
             f"energy_slope={slope:.1e}/period")


def test_criterion_8_derivative_oracles():
    t0 = time.time()
    rng = np.random.default_rng(8)
    eps = 1e-6
    worst = 0.0

    def rel_err(analytic, fd):
        return float(np.max(np.abs(analytic - fd)) / (1.0 + np.max(np.abs(analytic))))

    from hovic.mechanics import rhs
    for _ in range(100):
        name = rng.choice(sorted(MODELS))
        system = MODELS[name].system
        rr = rhs(system)
        q = rng.uniform(-1.0, 1.0, system.dim_q)
        if name == "kepler":
            q = q + np.sign(q + 0.5) * 0.8
        p = rng.uniform(-1.0, 1.0, system.dim_q)
        u = rng.uniform(-1.0, 1.0, system.dim_u)
        dfq, dfp = rr.f_jacobians(q, p)
        dgq, dgp, dgu = rr.g_jacobians(q, p, u)
        for idx in range(system.dim_q):
            d = np.zeros(system.dim_q); d[idx] = eps
            worst = max(worst,
                        rel_err(dfq[:, idx], (rr.f(q + d, p) - rr.f(q - d, p)) / (2 * eps)),
                        rel_err(dfp[:, idx], (rr.f(q, p + d) - rr.f(q, p - d)) / (2 * eps)),
                        rel_err(dgq[:, idx], (rr.g(q + d, p, u) - rr.g(q - d, p, u)) / (2 * eps)),
                        rel_err(dgp[:, idx], (rr.g(q, p + d, u) - rr.g(q, p - d, u)) / (2 * eps)))
        for idx in range(system.dim_u):
            d = np.zeros(system.dim_u); d[idx] = eps
            worst = max(worst, rel_err(dgu[:, idx],
                                       (rr.g(q, p, u + d) - rr.g(q, p, u - d)) / (2 * eps)))
    tr = transcribe(hager_ocp(T=1.0, N=1, variant="c3t3"))
    for _ in range(100):
        z = rng.normal(size=tr.layout.nvar)
        J = tr.jacobian(z)
        g = tr.cost_gradient(z)
        for j in range(tr.layout.nvar):
            zp = z.copy(); zp[j] += eps
            zm = z.copy(); zm[j] -= eps
            worst = max(worst,
                        rel_err(J[:, j], (tr.residual(zp) - tr.residual(zm)) / (2 * eps)),
                        rel_err(g[j], (tr.cost(zp) - tr.cost(zm)) / (2 * eps)))
    ok = worst <= 1e-6 and time.time() - t0 < 10.0
    _verdict(8, "derivative oracles", ok, f"worst_rel_err={worst:.2e}")
