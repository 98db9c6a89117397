"""Direct transcription of the optimal control problem and its KKT solver.

The dynamics constraints follow the spRK and sG one-step relations verbatim,
with one multiplier per relation. Controls are parameterized by r points per
step on their own node set; stage controls and cost-point controls are linear
evaluations of that control polynomial. The discrete cost integrates the
running cost over a (possibly different) set of cost quadrature points through
the step's interpolating polynomials.

The KKT system (gradient of the discrete optimal-control Lagrangian plus all
constraints) is solved by damped Newton; for linear-quadratic problems this
terminates in one step, keeping the multipliers exact for the adjoint
commutation check.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack

from . import quadrature as quad
from .errors import (DimensionMismatch, NoConvergence, SingularKkt,
                     UnknownVariant)
from .integrators import SchemeKind, StepperConfig, integrate
from .mechanics import hager_cost, hager_exact, builtin_models, rhs

DIVERGENCE_LIMIT = 1e3

_HAGER_VARIANTS = {
    "c3t1": (3, 1), "c3t2": (3, 2), "c3t3": (3, 3), "c3t4": (3, 4),
    "c2t1": (2, 1), "c2t2": (2, 2), "c2t3": (2, 3), "c2t4": (2, 4),
}
NONCOERCIVE_VARIANTS = frozenset({"c3t1", "c3t2", "c2t1"})


def lobatto_cost_rule(t):
    """Nodes/weights of the t-point Lobatto cost quadrature (t=1: midpoint)."""
    if t == 1:
        return np.array([0.5]), np.array([1.0])
    sc = quad.make_scheme(quad.Family.GAUSS_LOBATTO, t)
    return sc.c.copy(), sc.b.copy()


@dataclass(frozen=True)
class OcpDefinition:
    system: object
    cost: object
    q0: np.ndarray
    p0: np.ndarray
    T: float
    N: int
    kind: SchemeKind
    scheme: quad.CollocationScheme
    control_nodes: Optional[np.ndarray] = None  # r nodes in [0,1]; default: scheme.c
    cost_nodes: Optional[np.ndarray] = None     # t nodes; default: scheme.c
    cost_weights: Optional[np.ndarray] = None
    variant: Optional[str] = None

    def __post_init__(self):
        assert self.T > 0 and self.N >= 1
        if self.control_nodes is None:
            object.__setattr__(self, "control_nodes", self.scheme.c.copy())
        if self.cost_nodes is None:
            object.__setattr__(self, "cost_nodes", self.scheme.c.copy())
            object.__setattr__(self, "cost_weights", self.scheme.b.copy())
        assert self.cost_weights is not None and len(self.cost_weights) == len(self.cost_nodes)

    @property
    def h(self):
        return self.T / self.N


def hager_ocp(T=1.0, N=16, variant="c3t3"):
    """The linear-quadratic benchmark problem, sG/Lobatto s=3, chosen variant."""
    if variant not in _HAGER_VARIANTS:
        raise UnknownVariant(variant)
    r, t = _HAGER_VARIANTS[variant]
    scheme = quad.make_scheme(quad.Family.GAUSS_LOBATTO, 3)
    d = scheme.c.copy() if r == 3 else np.array([0.0, 1.0])
    e, w = lobatto_cost_rule(t)
    bundle = builtin_models()["hager"]
    return OcpDefinition(system=bundle.system, cost=bundle.cost,
                         q0=bundle.q0, p0=bundle.p0, T=T, N=N,
                         kind=SchemeKind.SG, scheme=scheme,
                         control_nodes=d, cost_nodes=e, cost_weights=w,
                         variant=variant)


def hager_cost_variant(variant, qdot_stages, controls, h):
    """Discrete running cost of one step per the named variant.

    qdot_stages are the three Lobatto stage micro-velocities; controls are the
    three stage controls (c3 variants) or the two control points (c2 variants).
    Written out directly, independent of the generic transcription path.
    """
    if variant not in _HAGER_VARIANTS:
        raise UnknownVariant(variant)
    r, t = _HAGER_VARIANTS[variant]
    Qd = np.asarray(qdot_stages, float)
    U = np.asarray(controls, float)
    if r == 2:
        if len(U) != 2:
            raise DimensionMismatch("c2 variants take two control points")
        U = np.array([U[0], 0.5 * (U[0] + U[1]), U[1]])
    elif len(U) != 3:
        raise DimensionMismatch("c3 variants take three stage controls")
    if t == 1:
        return h * (Qd[1] ** 2 + U[1] ** 2)
    if t == 2:
        return h / 2 * (Qd[0] ** 2 + Qd[2] ** 2 + U[0] ** 2 + U[2] ** 2)
    if t == 3:
        return h / 6 * (Qd[0] ** 2 + 4 * Qd[1] ** 2 + Qd[2] ** 2
                        + U[0] ** 2 + 4 * U[1] ** 2 + U[2] ** 2)
    # t=4: Lobatto-4 quadrature of qdot^2 + u^2 through the step interpolants
    c3 = quad.make_scheme(quad.Family.GAUSS_LOBATTO, 3).c
    e, w = lobatto_cost_rule(4)
    W = np.array([[quad.lagrange_eval(c3, j, ei) for j in range(3)] for ei in e])
    qd = W @ Qd
    uu = W @ U
    return h * float(w @ (qd ** 2 + uu ** 2))


@dataclass
class NlpLayout:
    """Index maps for the flattened primal vector and the multiplier vector."""
    n: int
    m: int
    s: int
    r: int
    N: int
    kind: SchemeKind

    def __post_init__(self):
        n, m, s, r, N = self.n, self.m, self.s, self.r, self.N
        self.off_q = 0
        self.off_p = (N + 1) * n
        self.off_Q = 2 * (N + 1) * n
        self.off_P = self.off_Q + N * s * n
        self.off_U = self.off_P + N * s * n
        self.nvar = self.off_U + N * r * m
        # multipliers: lam_0..lam_N, psi_0, mu_0..mu_{N-1}, Lam, Psi
        self.moff_lam = 0
        self.moff_psi0 = (N + 1) * n
        self.moff_mu = self.moff_psi0 + n
        self.moff_Lam = self.moff_mu + N * n
        self.moff_Psi = self.moff_Lam + N * s * n
        self.ncon = self.moff_Psi + N * s * n

    def q(self, k):
        return slice(self.off_q + k * self.n, self.off_q + (k + 1) * self.n)

    def p(self, k):
        return slice(self.off_p + k * self.n, self.off_p + (k + 1) * self.n)

    def Q(self, k, i):
        o = self.off_Q + (k * self.s + i) * self.n
        return slice(o, o + self.n)

    def P(self, k, i):
        o = self.off_P + (k * self.s + i) * self.n
        return slice(o, o + self.n)

    def U(self, k, a):
        o = self.off_U + (k * self.r + a) * self.m
        return slice(o, o + self.m)

    def lam(self, k):
        return slice(self.moff_lam + k * self.n, self.moff_lam + (k + 1) * self.n)

    def psi0(self):
        return slice(self.moff_psi0, self.moff_psi0 + self.n)

    def mu(self, k):
        return slice(self.moff_mu + k * self.n, self.moff_mu + (k + 1) * self.n)

    def Lam(self, k, i):
        o = self.moff_Lam + (k * self.s + i) * self.n
        return slice(o, o + self.n)

    def Psi(self, k, i):
        o = self.moff_Psi + (k * self.s + i) * self.n
        return slice(o, o + self.n)


class Transcription:
    """Callable bundle: constraint residual, Jacobian, cost, cost gradient.

    Constraint residuals carry the sign with which each multiplier enters the
    discrete optimal-control Lagrangian, so the KKT residual is literally the
    full gradient of that Lagrangian.
    """

    def __init__(self, ocp):
        self.ocp = ocp
        sys = ocp.system
        self.rhs = rhs(sys)
        sch = ocp.scheme
        n, m, s = sys.dim_q, sys.dim_u, sch.s
        d = np.asarray(ocp.control_nodes, float)
        r = len(d)
        self.layout = NlpLayout(n=n, m=m, s=s, r=r, N=ocp.N, kind=ocp.kind)
        self.h = ocp.h
        self.kind = SchemeKind(ocp.kind)
        if self.kind is SchemeKind.SG:
            co = quad.sg_coefficients(sch)
            self.alpha, self.beta = co.alpha, co.beta
            self.a, self.a_bar, self.b_bar = co.a, co.a_bar, co.b_bar
        else:
            co = quad.sprk_coefficients(sch)
            self.a, self.a_bar, self.b_bar = co.a, co.a_bar, co.b_bar
        self.b = sch.b
        # control polynomial evaluated at stage nodes
        self.E = np.array([[quad.lagrange_eval(d, a_, ci) for a_ in range(r)]
                           for ci in sch.c])
        # cost quadrature machinery
        e = np.asarray(ocp.cost_nodes, float)
        self.cost_w = np.asarray(ocp.cost_weights, float)
        self.t = len(e)
        if self.kind is SchemeKind.SPRK and (
                self.t != s or not np.allclose(e, sch.c) or not np.allclose(d, sch.c)):
            raise DimensionMismatch(
                "spRK transcription supports only r = t = s on the stage nodes")
        self.WQ = np.array([[quad.lagrange_eval(sch.c, j, ei) for j in range(s)]
                            for ei in e])
        self.WU = np.array([[quad.lagrange_eval(d, a_, ei) for a_ in range(r)]
                            for ei in e])

    # -- primal packing ----------------------------------------------------
    def pack(self, q, p, Q, P, Ubar):
        L = self.layout
        z = np.empty(L.nvar)
        for k in range(L.N + 1):
            z[L.q(k)] = q[k]
            z[L.p(k)] = p[k]
        for k in range(L.N):
            for i in range(L.s):
                z[L.Q(k, i)] = Q[k, i]
                z[L.P(k, i)] = P[k, i]
            for a_ in range(L.r):
                z[L.U(k, a_)] = Ubar[k, a_]
        return z

    def unpack(self, z):
        L = self.layout
        q = np.array([z[L.q(k)] for k in range(L.N + 1)])
        p = np.array([z[L.p(k)] for k in range(L.N + 1)])
        Q = np.array([[z[L.Q(k, i)] for i in range(L.s)] for k in range(L.N)])
        P = np.array([[z[L.P(k, i)] for i in range(L.s)] for k in range(L.N)])
        U = np.array([[z[L.U(k, a_)] for a_ in range(L.r)] for k in range(L.N)]) \
            if L.N else np.zeros((0, L.r, L.m))
        return q, p, Q, P, U

    def stage_controls(self, Ubar_k):
        return self.E @ Ubar_k  # (s, m)

    # -- constraints -------------------------------------------------------
    def residual(self, z):
        L = self.layout
        ocp = self.ocp
        h = self.h
        q, p, Q, P, U = self.unpack(z)
        out = np.empty(L.ncon)
        out[L.lam(0)] = -(q[0] - ocp.q0)
        out[L.psi0()] = -(p[0] - ocp.p0)
        if self.kind is SchemeKind.SG:
            for k in range(L.N):
                Uk = self.stage_controls(U[k])
                fv = np.array([self.rhs.f(Q[k, i], P[k, i]) for i in range(L.s)])
                gv = np.array([self.rhs.g(Q[k, i], P[k, i], Uk[i]) for i in range(L.s)])
                out[L.mu(k)] = q[k] - self.alpha @ Q[k]
                out[L.lam(k + 1)] = -(q[k + 1] - self.beta @ Q[k])
                for i in range(L.s):
                    out[L.Lam(k, i)] = h * fv[i] - self.a[i] @ Q[k]
                    out[L.Psi(k, i)] = (h * gv[i]
                                        - (self.beta[i] * p[k + 1] - self.alpha[i] * p[k]) / self.b_bar[i]
                                        - self.a_bar[i] @ P[k])
        else:
            for k in range(L.N):
                Uk = self.stage_controls(U[k])
                fv = np.array([self.rhs.f(Q[k, i], P[k, i]) for i in range(L.s)])
                gv = np.array([self.rhs.g(Q[k, i], P[k, i], Uk[i]) for i in range(L.s)])
                out[L.mu(k)] = -(q[k + 1] - q[k] - h * self.b @ fv)
                out[L.lam(k + 1)] = -(p[k + 1] - p[k] - h * self.b_bar @ gv)
                for i in range(L.s):
                    out[L.Lam(k, i)] = q[k] + h * self.a[i] @ fv - Q[k, i]
                    out[L.Psi(k, i)] = p[k] + h * self.a_bar[i] @ gv - P[k, i]
        return out

    def jacobian(self, z):
        L = self.layout
        h = self.h
        n = L.n
        q, p, Q, P, U = self.unpack(z)
        J = np.zeros((L.ncon, L.nvar))
        I = np.eye(n)
        J[L.lam(0), L.q(0)] = -I
        J[L.psi0(), L.p(0)] = -I
        for k in range(L.N):
            Uk = self.stage_controls(U[k])
            dfq = [None] * L.s; dfp = [None] * L.s
            dgq = [None] * L.s; dgp = [None] * L.s; dgu = [None] * L.s
            for i in range(L.s):
                dfq[i], dfp[i] = self.rhs.f_jacobians(Q[k, i], P[k, i])
                dgq[i], dgp[i], dgu[i] = self.rhs.g_jacobians(Q[k, i], P[k, i], Uk[i])
            if self.kind is SchemeKind.SG:
                J[L.mu(k), L.q(k)] = I
                for j in range(L.s):
                    J[L.mu(k), L.Q(k, j)] = -self.alpha[j] * I
                J[L.lam(k + 1), L.q(k + 1)] = -I
                for j in range(L.s):
                    J[L.lam(k + 1), L.Q(k, j)] = self.beta[j] * I
                for i in range(L.s):
                    J[L.Lam(k, i), L.Q(k, i)] += h * dfq[i]
                    J[L.Lam(k, i), L.P(k, i)] += h * dfp[i]
                    for j in range(L.s):
                        J[L.Lam(k, i), L.Q(k, j)] += -self.a[i, j] * I
                        J[L.Psi(k, i), L.P(k, j)] += -self.a_bar[i, j] * I
                    J[L.Psi(k, i), L.Q(k, i)] += h * dgq[i]
                    J[L.Psi(k, i), L.P(k, i)] += h * dgp[i]
                    J[L.Psi(k, i), L.p(k + 1)] = -(self.beta[i] / self.b_bar[i]) * I
                    J[L.Psi(k, i), L.p(k)] = (self.alpha[i] / self.b_bar[i]) * I
                    for a_ in range(L.r):
                        J[L.Psi(k, i), L.U(k, a_)] = h * self.E[i, a_] * dgu[i]
            else:
                J[L.mu(k), L.q(k + 1)] = -I
                J[L.mu(k), L.q(k)] = I
                J[L.lam(k + 1), L.p(k + 1)] = -I
                J[L.lam(k + 1), L.p(k)] = I
                for j in range(L.s):
                    J[L.mu(k), L.Q(k, j)] = h * self.b[j] * dfq[j]
                    J[L.mu(k), L.P(k, j)] = h * self.b[j] * dfp[j]
                    J[L.lam(k + 1), L.Q(k, j)] = h * self.b_bar[j] * dgq[j]
                    J[L.lam(k + 1), L.P(k, j)] = h * self.b_bar[j] * dgp[j]
                    for a_ in range(L.r):
                        J[L.lam(k + 1), L.U(k, a_)] += h * self.b_bar[j] * self.E[j, a_] * dgu[j]
                for i in range(L.s):
                    J[L.Lam(k, i), L.q(k)] = I
                    J[L.Lam(k, i), L.Q(k, i)] += -I
                    J[L.Psi(k, i), L.p(k)] = I
                    J[L.Psi(k, i), L.P(k, i)] += -I
                    for j in range(L.s):
                        J[L.Lam(k, i), L.Q(k, j)] += h * self.a[i, j] * dfq[j]
                        J[L.Lam(k, i), L.P(k, j)] += h * self.a[i, j] * dfp[j]
                        J[L.Psi(k, i), L.Q(k, j)] += h * self.a_bar[i, j] * dgq[j]
                        J[L.Psi(k, i), L.P(k, j)] += h * self.a_bar[i, j] * dgp[j]
                        for a_ in range(L.r):
                            J[L.Psi(k, i), L.U(k, a_)] += (
                                h * self.a_bar[i, j] * self.E[j, a_] * dgu[j])
        return J

    # -- cost ---------------------------------------------------------------
    def _cost_points(self, Qk, Pk, Ubark):
        return self.WQ @ Qk, self.WQ @ Pk, self.WU @ Ubark

    def cost(self, z):
        L = self.layout
        cost = self.ocp.cost
        q, p, Q, P, U = self.unpack(z)
        total = 0.0
        for k in range(L.N):
            qe, pe, ue = self._cost_points(Q[k], P[k], U[k])
            for e in range(self.t):
                total += self.h * self.cost_w[e] * cost.C(qe[e], pe[e], ue[e])
        return total + cost.Phi(q[-1], p[-1])

    def cost_gradient(self, z):
        L = self.layout
        cost = self.ocp.cost
        q, p, Q, P, U = self.unpack(z)
        g = np.zeros(L.nvar)
        for k in range(L.N):
            qe, pe, ue = self._cost_points(Q[k], P[k], U[k])
            for e in range(self.t):
                w = self.h * self.cost_w[e]
                cq = w * cost.dC_dq(qe[e], pe[e], ue[e])
                cp = w * cost.dC_dp(qe[e], pe[e], ue[e])
                cu = w * cost.dC_du(qe[e], pe[e], ue[e])
                for j in range(L.s):
                    g[L.Q(k, j)] += self.WQ[e, j] * cq
                    g[L.P(k, j)] += self.WQ[e, j] * cp
                for a_ in range(L.r):
                    g[L.U(k, a_)] += self.WU[e, a_] * cu
        g[L.q(L.N)] += cost.dPhi_dq(q[-1], p[-1])
        g[L.p(L.N)] += cost.dPhi_dp(q[-1], p[-1])
        return g

    # -- Lagrangian machinery ----------------------------------------------
    def lagrangian_gradient(self, z, mult):
        return self.cost_gradient(z) + self.jacobian(z).T @ mult

    def _step_cost(self, k, w):
        L = self.layout
        cost = self.ocp.cost
        Qk = w[: L.s * L.n].reshape(L.s, L.n)
        Pk = w[L.s * L.n: 2 * L.s * L.n].reshape(L.s, L.n)
        Uk = w[2 * L.s * L.n:].reshape(L.r, L.m)
        qe, pe, ue = self._cost_points(Qk, Pk, Uk)
        total = 0.0
        for e in range(self.t):
            total += self.h * self.cost_w[e] * cost.C(qe[e], pe[e], ue[e])
        return total

    def _step_cost_grad(self, k, w):
        L = self.layout
        cost = self.ocp.cost
        Qk = w[: L.s * L.n].reshape(L.s, L.n)
        Pk = w[L.s * L.n: 2 * L.s * L.n].reshape(L.s, L.n)
        Uk = w[2 * L.s * L.n:].reshape(L.r, L.m)
        qe, pe, ue = self._cost_points(Qk, Pk, Uk)
        gQ = np.zeros((L.s, L.n)); gP = np.zeros((L.s, L.n))
        gU = np.zeros((L.r, L.m))
        for e in range(self.t):
            wgt = self.h * self.cost_w[e]
            cq = wgt * cost.dC_dq(qe[e], pe[e], ue[e])
            cp = wgt * cost.dC_dp(qe[e], pe[e], ue[e])
            cu = wgt * cost.dC_du(qe[e], pe[e], ue[e])
            gQ += np.outer(self.WQ[e], cq)
            gP += np.outer(self.WQ[e], cp)
            gU += np.outer(self.WU[e], cu)
        return np.concatenate([gQ.ravel(), gP.ravel(), gU.ravel()])

    def _step_vars(self, k):
        L = self.layout
        idx = []
        for i in range(L.s):
            idx.extend(range(L.Q(k, i).start, L.Q(k, i).stop))
        for i in range(L.s):
            idx.extend(range(L.P(k, i).start, L.P(k, i).stop))
        for a_ in range(L.r):
            idx.extend(range(L.U(k, a_).start, L.U(k, a_).stop))
        return np.array(idx, dtype=int)

    def _stage_con_grad(self, k, i, w, Lam_i, Psi_i):
        # gradient of Lam_i . h f_i + Psi_i . h g_i wrt (Q_i, P_i, Ubar_k)
        L = self.layout
        Qi = w[: L.n]
        Pi = w[L.n: 2 * L.n]
        Uk = w[2 * L.n:].reshape(L.r, L.m)
        ui = self.E[i] @ Uk
        dfq, dfp = self.rhs.f_jacobians(Qi, Pi)
        dgq, dgp, dgu = self.rhs.g_jacobians(Qi, Pi, ui)
        gq = self.h * (Lam_i @ dfq + Psi_i @ dgq)
        gp = self.h * (Lam_i @ dfp + Psi_i @ dgp)
        gu = np.outer(self.E[i], self.h * (Psi_i @ dgu))
        return np.concatenate([gq, gp, gu.ravel()])

    def lagrangian_hessian(self, z, mult, fd_step=1e-6):
        """Hessian of the discrete OC Lagrangian wrt the primal variables.

        Assembled blockwise: the cost and the stage constraints are separable
        per step/stage, so central differences of their analytic gradients on
        the small blocks give the full matrix.
        """
        L = self.layout
        H = np.zeros((L.nvar, L.nvar))
        for k in range(L.N):
            idx = self._step_vars(k)
            w0 = z[idx]
            dim = len(idx)
            Hk = np.zeros((dim, dim))
            for j in range(dim):
                wp = w0.copy(); wp[j] += fd_step
                wm = w0.copy(); wm[j] -= fd_step
                Hk[:, j] = (self._step_cost_grad(k, wp)
                            - self._step_cost_grad(k, wm)) / (2 * fd_step)
            # constraint curvature, stage-local
            for i in range(L.s):
                sidx = np.concatenate([
                    np.arange(L.Q(k, i).start, L.Q(k, i).stop),
                    np.arange(L.P(k, i).start, L.P(k, i).stop),
                    np.arange(L.U(k, 0).start, L.U(k, L.r - 1).stop)])
                pos = np.searchsorted(idx, sidx)
                Lam_i = mult[L.Lam(k, i)]
                Psi_i = mult[L.Psi(k, i)]
                v0 = z[sidx]
                sdim = len(sidx)
                Hs = np.zeros((sdim, sdim))
                for j in range(sdim):
                    vp = v0.copy(); vp[j] += fd_step
                    vm = v0.copy(); vm[j] -= fd_step
                    Hs[:, j] = (self._stage_con_grad(k, i, vp, Lam_i, Psi_i)
                                - self._stage_con_grad(k, i, vm, Lam_i, Psi_i)) / (2 * fd_step)
                Hk[np.ix_(pos, pos)] += 0.5 * (Hs + Hs.T)
            H[np.ix_(idx, idx)] += 0.5 * (Hk + Hk.T)
        # final-cost curvature on (q_N, p_N)
        cost = self.ocp.cost
        fidx = np.concatenate([np.arange(L.q(L.N).start, L.q(L.N).stop),
                               np.arange(L.p(L.N).start, L.p(L.N).stop)])

        def phigrad(v):
            qN, pN = v[: L.n], v[L.n:]
            return np.concatenate([cost.dPhi_dq(qN, pN), cost.dPhi_dp(qN, pN)])

        v0 = z[fidx]
        Hf = np.zeros((2 * L.n, 2 * L.n))
        for j in range(2 * L.n):
            vp = v0.copy(); vp[j] += fd_step
            vm = v0.copy(); vm[j] -= fd_step
            Hf[:, j] = (phigrad(vp) - phigrad(vm)) / (2 * fd_step)
        H[np.ix_(fidx, fidx)] += 0.5 * (Hf + Hf.T)
        return H


def transcribe(ocp):
    """Transcription bundle with layout, residual/Jacobian and cost callables."""
    return Transcription(ocp)


@dataclass
class KktSolution:
    trans: Transcription
    z: np.ndarray
    mult: np.ndarray
    iterations: int
    residual: float

    def __post_init__(self):
        L = self.trans.layout
        self.q, self.p, self.Q, self.P, self.Ubar = self.trans.unpack(self.z)
        self.U_stage = np.array([self.trans.stage_controls(self.Ubar[k])
                                 for k in range(L.N)]) if L.N else np.zeros((0, L.s, L.m))
        self.lam = np.array([self.mult[L.lam(k)] for k in range(L.N + 1)])
        self.psi0 = self.mult[L.psi0()]
        self.mu = np.array([self.mult[L.mu(k)] for k in range(L.N)])
        self.Lam = np.array([[self.mult[L.Lam(k, i)] for i in range(L.s)]
                             for k in range(L.N)])
        self.Psi = np.array([[self.mult[L.Psi(k, i)] for i in range(L.s)]
                             for k in range(L.N)])

    @property
    def diverged(self):
        return self.U_stage.size > 0 and float(np.max(np.abs(self.U_stage))) > DIVERGENCE_LIMIT

    @property
    def max_control(self):
        return float(np.max(np.abs(self.U_stage))) if self.U_stage.size else 0.0


def _initial_primal(trans, strategy):
    ocp = trans.ocp
    L = trans.layout
    if strategy == "zeros":
        return np.zeros(L.nvar)
    if strategy != "forward-sim":
        raise ValueError(f"unknown init strategy {strategy!r}")
    cfg = StepperConfig(kind=ocp.kind, scheme=ocp.scheme)
    traj = integrate(ocp.system, cfg, ocp.q0, ocp.p0, None, ocp.T, ocp.N)
    Q = np.array([blk.Q for blk in traj.stages])
    P = np.array([blk.P for blk in traj.stages])
    U = np.zeros((L.N, L.r, L.m))
    return trans.pack(traj.q, traj.p, Q, P, U)


def _control_hessian(trans, z):
    """Hessian of one step's discrete cost in that step's control points."""
    L = trans.layout
    cost = trans.ocp.cost
    q, p, Q, P, U = trans.unpack(z)
    k = 0
    qe, pe, ue = trans._cost_points(Q[k], P[k], U[k])
    dim = L.r * L.m
    H = np.zeros((dim, dim))
    for e in range(trans.t):
        Huu = np.atleast_2d(cost.d2C_du2(qe[e], pe[e], ue[e]))
        w = trans.h * trans.cost_w[e]
        H += w * np.kron(np.outer(trans.WU[e], trans.WU[e]), Huu)
    return H


def solve_kkt(trans, init_strategy="forward-sim", tol=1e-10, max_iter=50,
              rcond_floor=1e-13):
    """Damped Newton on the full primal-dual stationarity system.

    Raises SingularKkt when the discrete cost is not coercive in the controls
    (its per-step control Hessian is rank deficient, so some control direction
    never enters the cost) or when the assembled KKT matrix itself is rank
    deficient.
    """
    if isinstance(trans, OcpDefinition):
        trans = transcribe(trans)
    L = trans.layout
    z = _initial_primal(trans, init_strategy)
    mult = np.zeros(L.ncon)

    if L.N and L.r * L.m:
        Huu = _control_hessian(trans, z)
        ev = np.linalg.eigvalsh(0.5 * (Huu + Huu.T))
        if ev[0] <= 1e-10 * max(1.0, ev[-1]):
            raise SingularKkt(
                "control Hessian of the discrete cost is rank deficient "
                f"(min eigenvalue {ev[0]:.2e}); non-coercive discretization")

    def full_residual(z, mult):
        return np.concatenate([trans.lagrangian_gradient(z, mult),
                               trans.residual(z)])

    R = full_residual(z, mult)
    history = [float(np.max(np.abs(R)))]
    for it in range(1, max_iter + 1):
        if history[-1] < tol:
            return KktSolution(trans=trans, z=z, mult=mult,
                               iterations=it - 1, residual=history[-1])
        H = trans.lagrangian_hessian(z, mult)
        A = trans.jacobian(z)
        K = np.block([[H, A.T], [A, np.zeros((L.ncon, L.ncon))]])
        anorm = np.linalg.norm(K, 1)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            lu, piv = sla.lu_factor(K)
        rcond = lapack.dgecon(lu, anorm)[0]
        if not np.isfinite(rcond) or rcond < rcond_floor:
            raise SingularKkt(f"KKT matrix rank deficient (rcond={rcond:.2e})")
        step = sla.lu_solve((lu, piv), R)
        damp = 1.0
        for _ in range(30):
            z_new = z - damp * step[: L.nvar]
            m_new = mult - damp * step[L.nvar:]
            R_new = full_residual(z_new, m_new)
            if np.max(np.abs(R_new)) < history[-1] or history[-1] < tol:
                break
            damp *= 0.5
        else:
            raise NoConvergence("KKT Newton: damping exhausted",
                                residual=history[-1], history=history)
        z, mult, R = z_new, m_new, R_new
        history.append(float(np.max(np.abs(R))))
    if history[-1] < tol:
        return KktSolution(trans=trans, z=z, mult=mult,
                           iterations=max_iter, residual=history[-1])
    raise NoConvergence("KKT Newton: iteration cap",
                        residual=history[-1], history=history)


__all__ = ["OcpDefinition", "NlpLayout", "KktSolution", "Transcription",
           "transcribe", "solve_kkt", "hager_ocp", "hager_cost_variant",
           "hager_exact", "hager_cost", "lobatto_cost_rule",
           "NONCOERCIVE_VARIANTS", "DIVERGENCE_LIMIT"]
