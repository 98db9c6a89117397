"""Adjoint side of the discrete optimal control problem.

The KKT multipliers of the sG transcription, rescaled by the conjugate
weights, solve the same sG discretization applied to the continuous
state-adjoint boundary value problem. This module provides the rescaling,
the residual of that discrete adjoint system, an independent all-at-once
solver for the discretized BVP, and the commutation check comparing the two.

The adjoint pair inherits the partitioned structure: the p-costate is
macro-node valued with stage values chi (the rescaled multipliers of the
momentum stage relations), while the q-costate enters the stage equations
exactly as the momentum does in the forward scheme, with stage values Gamma.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import quadrature as quad
from .errors import (DimensionMismatch, NoConvergence, NonCoerciveVariant,
                     SchemeMismatch, SingularJacobian, ZeroWeight)
from .integrators import SchemeKind, StepperConfig, integrate
from .mechanics import rhs
from .ocp import NONCOERCIVE_VARIANTS, hager_ocp, solve_kkt, transcribe


@dataclass
class TransformedMultipliers:
    """Weight-rescaled KKT multipliers in state-adjoint variables.

    Gamma and chi are the stage costates (Gamma_i = Lam_i / bbar_i,
    chi_i = Psi_i / bbar_i); lam and psi are the macro-node costates. psi[k]
    is assembled from step k's chi through the left endpoint weights, psi[N]
    from the last step through the right endpoint weights. matching_residual
    reports how far the right-endpoint assembly of step k-1 is from the
    left-endpoint assembly of step k (zero at a KKT point).
    """
    lam: np.ndarray    # (N+1, n)
    psi: np.ndarray    # (N+1, n)
    Gamma: np.ndarray  # (N, s, n)
    chi: np.ndarray    # (N, s, n)
    b_bar: np.ndarray
    matching_residual: float


def transform(sol):
    """Rescale a KKT solution's stage multipliers into stage costates."""
    trans = sol.trans
    if trans.kind is not SchemeKind.SG:
        raise SchemeMismatch("multiplier transform requires the sG scheme")
    bb = trans.b_bar
    if np.any(bb == 0.0):
        raise ZeroWeight("conjugate weights must be nonzero to rescale")
    Gamma = sol.Lam / bb[None, :, None]
    chi = sol.Psi / bb[None, :, None]
    alpha, beta = trans.alpha, trans.beta
    N = trans.layout.N
    psi = np.empty((N + 1, trans.layout.n))
    for k in range(N):
        psi[k] = np.einsum("i,in->n", alpha, chi[k])
    psi[N] = np.einsum("i,in->n", beta, chi[N - 1])
    match = 0.0
    for k in range(1, N):
        match = max(match, float(np.max(np.abs(
            psi[k] - np.einsum("i,in->n", beta, chi[k - 1])))))
    match = max(match, float(np.max(np.abs(psi[0] - sol.psi0))))
    return TransformedMultipliers(lam=sol.lam.copy(), psi=psi, Gamma=Gamma,
                                  chi=chi, b_bar=bb.copy(),
                                  matching_residual=match)


def untransform(tm):
    """Invert the rescaling; round-trips with transform to machine precision."""
    Lam = tm.Gamma * tm.b_bar[None, :, None]
    Psi = tm.chi * tm.b_bar[None, :, None]
    return Lam, Psi


def adjoint_residual(sol, tm=None):
    """Max-norm residual of the discrete state-adjoint system at a KKT point.

    Evaluates the costate stage equations, the control stationarity relation
    and the terminal conditions on the primal trajectory stored in the KKT
    solution. Small residual certifies that the rescaled multipliers solve
    the sG discretization of the continuous adjoint equations.
    """
    trans = sol.trans
    if trans.kind is not SchemeKind.SG:
        raise SchemeMismatch("adjoint residual is defined for the sG scheme")
    if tm is None:
        tm = transform(sol)
    ocp = trans.ocp
    cost = ocp.cost
    rr = trans.rhs
    L = trans.layout
    h, a, ab, bb = trans.h, trans.a, trans.a_bar, trans.b_bar
    alpha, beta = trans.alpha, trans.beta
    res = tm.matching_residual
    res = max(res, float(np.max(np.abs(sol.mu - sol.lam[:-1]))))
    res = max(res, float(np.max(np.abs(
        sol.lam[-1] - cost.dPhi_dq(sol.q[-1], sol.p[-1])))))
    res = max(res, float(np.max(np.abs(
        tm.psi[-1] - cost.dPhi_dp(sol.q[-1], sol.p[-1])))))
    for k in range(L.N):
        for i in range(L.s):
            Qi, Pi, ui = sol.Q[k, i], sol.P[k, i], sol.U_stage[k, i]
            dfq, dfp = rr.f_jacobians(Qi, Pi)
            dgq, dgp, dgu = rr.g_jacobians(Qi, Pi, ui)
            cq = cost.dC_dq(Qi, Pi, ui)
            cp = cost.dC_dp(Qi, Pi, ui)
            cu = cost.dC_du(Qi, Pi, ui)
            Gi, ci = tm.Gamma[k, i], tm.chi[k, i]
            rq = (cq + dfq.T @ Gi + dgq.T @ ci
                  + (beta[i] * tm.lam[k + 1] - alpha[i] * tm.lam[k]) / (h * bb[i])
                  + np.einsum("j,jn->n", ab[i], tm.Gamma[k]) / h)
            rp = (cp + dfp.T @ Gi + dgp.T @ ci
                  + np.einsum("j,jn->n", a[i], tm.chi[k]) / h)
            ru = cu + dgu.T @ ci
            res = max(res, float(np.max(np.abs(rq))),
                      float(np.max(np.abs(rp))), float(np.max(np.abs(ru))))
    return res


def feedback_control(cost, rr, Qi, Pi, chi_i, tol=1e-12, max_iter=50):
    """Stage control from the stationarity relation dC/du + (dg/du)^T chi = 0.

    One closed-form step for costs quadratic in u, Newton otherwise (the
    control Hessian is held fixed across the iteration, so non-quadratic
    costs converge linearly; they still hit the tolerance for smooth costs).
    """
    u = np.zeros(rr.system.dim_u)
    dgu = rr.g_jacobians(Qi, Pi, u)[2]
    Huu = np.atleast_2d(cost.d2C_du2(Qi, Pi, u))
    for _ in range(max_iter):
        grad = cost.dC_du(Qi, Pi, u) + dgu.T @ chi_i
        if np.max(np.abs(grad)) < tol:
            return u
        try:
            u = u - np.linalg.solve(Huu, grad)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobian("control Hessian singular in feedback") from exc
    raise NoConvergence("feedback control stationarity did not converge",
                        residual=float(np.max(np.abs(grad))))


class StateAdjointBvp:
    """All-at-once Newton solve of the sG-discretized state-adjoint BVP.

    Unknowns are the macro nodes (q, p, lam, psi) and the stage blocks
    (Q, P, Gamma, chi); stage controls are eliminated by the feedback
    relation. The costate pair is discretized by the same scheme as the
    state pair, with psi in the configuration-like role.
    """

    def __init__(self, ocp):
        if SchemeKind(ocp.kind) is not SchemeKind.SG:
            raise SchemeMismatch("state-adjoint BVP uses the sG scheme")
        self.ocp = ocp
        self.rhs = rhs(ocp.system)
        co = quad.sg_coefficients(ocp.scheme)
        self.a, self.ab, self.bb = co.a, co.a_bar, co.b_bar
        self.alpha, self.beta = co.alpha, co.beta
        self.n = ocp.system.dim_q
        self.s = ocp.scheme.s
        self.N = ocp.N
        self.h = ocp.h
        n, s, N = self.n, self.s, self.N
        self.n_macro = 4 * n * (N + 1)
        self.nvar = self.n_macro + 4 * s * n * N

    # layout: [q | p | lam | psi | per-step (Q, P, Gamma, chi)]
    def _macro(self, x):
        n, N = self.n, self.N
        blk = x[: self.n_macro].reshape(4, N + 1, n)
        return blk[0], blk[1], blk[2], blk[3]

    def _stages(self, x):
        n, s, N = self.n, self.s, self.N
        blk = x[self.n_macro:].reshape(N, 4, s, n)
        return blk[:, 0], blk[:, 1], blk[:, 2], blk[:, 3]

    def pack(self, q, p, lam, psi, Q, P, Gamma, chi):
        x = np.empty(self.nvar)
        x[: self.n_macro] = np.stack([q, p, lam, psi]).ravel()
        x[self.n_macro:] = np.stack([Q, P, Gamma, chi], axis=1).ravel()
        return x

    def residual(self, x):
        ocp = self.ocp
        cost = ocp.cost
        rr = self.rhs
        n, s, N, h = self.n, self.s, self.N, self.h
        a, ab, bb = self.a, self.ab, self.bb
        al, be = self.alpha, self.beta
        q, p, lam, psi = self._macro(x)
        Q, P, Gamma, chi = self._stages(x)
        out = [q[0] - ocp.q0, p[0] - ocp.p0,
               lam[N] - cost.dPhi_dq(q[N], p[N]),
               psi[N] - cost.dPhi_dp(q[N], p[N])]
        for k in range(N):
            out.append(q[k] - al @ Q[k])
            out.append(q[k + 1] - be @ Q[k])
            out.append(psi[k] - al @ chi[k])
            out.append(psi[k + 1] - be @ chi[k])
            for i in range(s):
                ui = feedback_control(cost, rr, Q[k, i], P[k, i], chi[k, i])
                dfq, dfp = rr.f_jacobians(Q[k, i], P[k, i])
                dgq, dgp, _ = rr.g_jacobians(Q[k, i], P[k, i], ui)
                cq = cost.dC_dq(Q[k, i], P[k, i], ui)
                cp = cost.dC_dp(Q[k, i], P[k, i], ui)
                Gi, ci = Gamma[k, i], chi[k, i]
                out.append(rr.f(Q[k, i], P[k, i]) - (a[i] @ Q[k]) / h)
                out.append(rr.g(Q[k, i], P[k, i], ui)
                           - (be[i] * p[k + 1] - al[i] * p[k]) / (h * bb[i])
                           - (ab[i] @ P[k]) / h)
                out.append(cp + dfp.T @ Gi + dgp.T @ ci + (a[i] @ chi[k]) / h)
                out.append(cq + dfq.T @ Gi + dgq.T @ ci
                           + (be[i] * lam[k + 1] - al[i] * lam[k]) / (h * bb[i])
                           + (ab[i] @ Gamma[k]) / h)
        return np.concatenate(out)

    def _fd_groups(self):
        """Structurally independent column groups for the FD Jacobian.

        Each residual row touches one step's stages and at most two adjacent
        macro nodes, so macro columns three nodes apart (same field and
        component) and same-position stage columns of different steps can be
        perturbed together. The group count is independent of N.
        """
        n, s, N = self.n, self.s, self.N
        step_len = 4 * n + 4 * s * n

        def step_rows(k):
            o = 4 * n + k * step_len
            return np.arange(o, o + step_len)

        groups = {}
        for f in range(4):  # q, p, lam, psi
            for k in range(N + 1):
                for c in range(n):
                    col = (f * (N + 1) + k) * n + c
                    rows = []
                    if k > 0:
                        rows.append(step_rows(k - 1))
                    if k < N:
                        rows.append(step_rows(k))
                    if k == 0 and f == 0:
                        rows.append(np.arange(0, n))
                    if k == 0 and f == 1:
                        rows.append(np.arange(n, 2 * n))
                    if k == N and f in (0, 1):
                        rows.append(np.arange(2 * n, 4 * n))
                    if k == N and f == 2:
                        rows.append(np.arange(2 * n, 3 * n))
                    if k == N and f == 3:
                        rows.append(np.arange(3 * n, 4 * n))
                    key = ("m", f, k % 3, c)
                    groups.setdefault(key, ([], []))
                    groups[key][0].append(col)
                    groups[key][1].append(np.concatenate(rows))
        for f in range(4):  # Q, P, Gamma, chi
            for k in range(N):
                for i in range(s):
                    for c in range(n):
                        col = self.n_macro + ((k * 4 + f) * s + i) * n + c
                        key = ("s", f, i, c)
                        groups.setdefault(key, ([], []))
                        groups[key][0].append(col)
                        groups[key][1].append(step_rows(k))
        return [(np.array(cols), rows) for cols, rows in groups.values()]

    def _jacobian_fd(self, x, fd_step):
        J = np.zeros((self.nvar, self.nvar))
        for cols, rows_list in self._groups:
            xp = x.copy(); xp[cols] += fd_step
            xm = x.copy(); xm[cols] -= fd_step
            d = (self.residual(xp) - self.residual(xm)) / (2 * fd_step)
            for j, rows in zip(cols, rows_list):
                J[rows, j] = d[rows]
        return J

    def initial_guess(self):
        ocp = self.ocp
        cfg = StepperConfig(kind=SchemeKind.SG, scheme=ocp.scheme)
        traj = integrate(ocp.system, cfg, ocp.q0, ocp.p0, None, ocp.T, ocp.N)
        Q = np.array([blk.Q for blk in traj.stages])
        P = np.array([blk.P for blk in traj.stages])
        z = np.zeros((self.N + 1, self.n))
        zs = np.zeros((self.N, self.s, self.n))
        return self.pack(traj.q, traj.p, z, z.copy(), Q, P, zs, zs.copy())

    def solve(self, tol=1e-10, max_iter=30, fd_step=1e-7):
        self._groups = self._fd_groups()
        x = self.initial_guess()
        r = self.residual(x)
        best = float(np.max(np.abs(r)))
        for it in range(max_iter):
            if best < tol:
                break
            J = self._jacobian_fd(x, fd_step)
            try:
                dx = np.linalg.solve(J, r)
            except np.linalg.LinAlgError as exc:
                raise SingularJacobian("state-adjoint BVP Jacobian singular") from exc
            damp = 1.0
            for _ in range(30):
                x_new = x - damp * dx
                r_new = self.residual(x_new)
                if np.max(np.abs(r_new)) < best:
                    break
                damp *= 0.5
            else:
                raise NoConvergence("state-adjoint BVP: damping exhausted",
                                    residual=best)
            x, r = x_new, r_new
            best = float(np.max(np.abs(r)))
        else:
            if best >= tol:
                raise NoConvergence("state-adjoint BVP: iteration cap",
                                    residual=best)
        q, p, lam, psi = self._macro(x)
        Q, P, Gamma, chi = self._stages(x)
        return BvpSolution(q=q, p=p, lam=lam, psi=psi, Q=Q, P=P,
                           Gamma=Gamma, chi=chi, residual=best)


@dataclass
class BvpSolution:
    q: np.ndarray
    p: np.ndarray
    lam: np.ndarray
    psi: np.ndarray
    Q: np.ndarray
    P: np.ndarray
    Gamma: np.ndarray
    chi: np.ndarray
    residual: float


def solve_state_adjoint_bvp(ocp, tol=1e-10, max_iter=30):
    return StateAdjointBvp(ocp).solve(tol=tol, max_iter=max_iter)


@dataclass
class CommutationReport:
    N: int
    variant: str
    scale: float
    adjoint_residual: float
    deviation_lam: float
    deviation_psi: float
    deviation_state: float
    roundtrip: float
    tolerance: float
    passed: bool


def commutation_check(ocp=None, T=1.0, N=16, variant="c3t3", tol_factor=1e-8):
    """Compare transformed KKT multipliers against the discretized BVP.

    The transcription multipliers, rescaled by the conjugate weights, must
    coincide with the costates of the same scheme applied directly to the
    continuous state-adjoint system. Requires the sG scheme, a coercive cost
    discretization, and control/cost nodes equal to the stage nodes.
    """
    if ocp is None:
        ocp = hager_ocp(T=T, N=N, variant=variant)
    if SchemeKind(ocp.kind) is not SchemeKind.SG:
        raise SchemeMismatch("commutation check requires the sG scheme")
    if ocp.variant in NONCOERCIVE_VARIANTS:
        raise NonCoerciveVariant(
            f"variant {ocp.variant} has a rank-deficient control Hessian")
    c = ocp.scheme.c
    if (len(ocp.control_nodes) != len(c) or not np.allclose(ocp.control_nodes, c)
            or len(ocp.cost_nodes) != len(c) or not np.allclose(ocp.cost_nodes, c)):
        raise DimensionMismatch(
            "commutation check needs control and cost nodes at the stage nodes")

    sol = solve_kkt(transcribe(ocp))
    tm = transform(sol)
    res = adjoint_residual(sol, tm)
    Lam2, Psi2 = untransform(tm)
    roundtrip = max(float(np.max(np.abs(Lam2 - sol.Lam))),
                    float(np.max(np.abs(Psi2 - sol.Psi))))
    bvp = solve_state_adjoint_bvp(ocp)
    dev_lam = float(np.max(np.abs(tm.lam - bvp.lam)))
    dev_psi = float(np.max(np.abs(tm.psi - bvp.psi)))
    dev_state = max(float(np.max(np.abs(sol.q - bvp.q))),
                    float(np.max(np.abs(sol.p - bvp.p))))
    scale = max(float(np.max(np.abs(tm.lam))), float(np.max(np.abs(tm.psi))),
                float(np.max(np.abs(sol.q))), float(np.max(np.abs(sol.p))))
    tol = tol_factor * (1.0 + scale)
    passed = (res <= tol and dev_lam <= tol and dev_psi <= tol
              and dev_state <= tol and roundtrip <= 1e-13)
    return CommutationReport(N=ocp.N, variant=ocp.variant or "", scale=scale,
                             adjoint_residual=res, deviation_lam=dev_lam,
                             deviation_psi=dev_psi, deviation_state=dev_state,
                             roundtrip=roundtrip, tolerance=tol, passed=passed)


__all__ = ["TransformedMultipliers", "transform", "untransform",
           "adjoint_residual", "feedback_control", "StateAdjointBvp",
           "BvpSolution", "solve_state_adjoint_bvp", "CommutationReport",
           "commutation_check"]
