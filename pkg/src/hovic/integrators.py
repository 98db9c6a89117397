"""One-step maps and trajectory integration for the spRK and sG schemes.

Both steppers solve their stage equations by full Newton with analytic stage
Jacobians assembled from the partitioned right-hand sides. Micro-stage
controls are inputs sampled from a control function, never unknowns.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import quadrature as quad
from .errors import DegenerateFit, NoConvergence, SingularJacobian
from .mechanics import rhs


class SchemeKind(str, Enum):
    SPRK = "sprk"
    SG = "sg"


@dataclass(frozen=True)
class StepperConfig:
    kind: SchemeKind
    scheme: quad.CollocationScheme
    tol: float = 1e-12          # residual infinity norm
    max_iter: int = 50
    predictor: str = "constant"  # "constant" | "extrapolate"

    def __post_init__(self):
        assert self.tol > 0 and self.max_iter >= 1


@dataclass
class StageBlock:
    Q: np.ndarray      # (s, n)
    P: np.ndarray      # (s, n)
    Qdot: np.ndarray   # (s, n)
    Pdot: np.ndarray   # (s, n)
    U: np.ndarray      # (s, m)


@dataclass
class DiscreteTrajectory:
    h: float
    N: int
    times: np.ndarray       # (N+1,)
    q: np.ndarray           # (N+1, n)
    p: np.ndarray           # (N+1, n)
    stages: list            # N StageBlocks


class _Stepper:
    """Shared Newton driver; subclasses provide residual/Jacobian layout."""

    def __init__(self, system, config):
        self.system = system
        self.config = config
        self.rhs = rhs(system)
        self.n = system.dim_q
        self.s = config.scheme.s

    def _newton(self, x, fun, label):
        cfg = self.config
        for _ in range(cfg.max_iter):
            r, J = fun(x)
            res = np.max(np.abs(r))
            if res < cfg.tol:
                return x
            try:
                dx = np.linalg.solve(J, r)
            except np.linalg.LinAlgError as exc:
                raise SingularJacobian(f"{label}: singular stage Jacobian") from exc
            x = x - dx
        r, _ = fun(x)
        res = float(np.max(np.abs(r)))
        if res < cfg.tol:
            return x
        raise NoConvergence(f"{label}: Newton stalled at residual {res:.3e}",
                            residual=res)


class SprkStepper(_Stepper):
    def __init__(self, system, config):
        super().__init__(system, config)
        co = quad.sprk_coefficients(config.scheme)
        self.a, self.a_bar, self.b_bar = co.a, co.a_bar, co.b_bar
        self.b = config.scheme.b

    def _guess(self, q0, p0, prev):
        s, n = self.s, self.n
        Q = np.tile(q0, (s, 1))
        P = np.tile(p0, (s, 1))
        if prev is not None and self.config.predictor == "extrapolate":
            c = self.config.scheme.c
            for i in range(s):
                w = np.array([quad.lagrange_eval(c, j, 1.0 + c[i]) for j in range(s)])
                Q[i] = w @ prev.Q
                P[i] = w @ prev.P
        return np.concatenate([Q.ravel(), P.ravel()])

    def step(self, q0, p0, U_stage, h, prev=None):
        s, n = self.s, self.n
        a, ab = self.a, self.a_bar

        def fun(x):
            Q = x[: s * n].reshape(s, n)
            P = x[s * n:].reshape(s, n)
            fv = np.empty((s, n))
            gv = np.empty((s, n))
            dfq = np.empty((s, n, n)); dfp = np.empty((s, n, n))
            dgq = np.empty((s, n, n)); dgp = np.empty((s, n, n))
            for j in range(s):
                fv[j] = self.rhs.f(Q[j], P[j])
                gv[j] = self.rhs.g(Q[j], P[j], U_stage[j])
                dfq[j], dfp[j] = self.rhs.f_jacobians(Q[j], P[j])
                dgq[j], dgp[j], _ = self.rhs.g_jacobians(Q[j], P[j], U_stage[j])
            rQ = Q - q0[None, :] - h * a @ fv
            rP = P - p0[None, :] - h * ab @ gv
            J = np.zeros((2 * s * n, 2 * s * n))
            I = np.eye(n)
            for i in range(s):
                for j in range(s):
                    d = I if i == j else 0.0
                    J[i * n:(i + 1) * n, j * n:(j + 1) * n] = d - h * a[i, j] * dfq[j]
                    J[i * n:(i + 1) * n, (s + j) * n:(s + j + 1) * n] = -h * a[i, j] * dfp[j]
                    J[(s + i) * n:(s + i + 1) * n, j * n:(j + 1) * n] = -h * ab[i, j] * dgq[j]
                    J[(s + i) * n:(s + i + 1) * n, (s + j) * n:(s + j + 1) * n] = (
                        d - h * ab[i, j] * dgp[j])
            return np.concatenate([rQ.ravel(), rP.ravel()]), J

        x = self._newton(self._guess(q0, p0, prev), fun, "sprk_step")
        Q = x[: s * n].reshape(s, n)
        P = x[s * n:].reshape(s, n)
        fv = np.array([self.rhs.f(Q[j], P[j]) for j in range(s)])
        gv = np.array([self.rhs.g(Q[j], P[j], U_stage[j]) for j in range(s)])
        q1 = q0 + h * self.b @ fv
        p1 = p0 + h * self.b_bar @ gv
        return q1, p1, StageBlock(Q=Q, P=P, Qdot=fv, Pdot=gv, U=np.array(U_stage))


class SgStepper(_Stepper):
    def __init__(self, system, config):
        super().__init__(system, config)
        co = quad.sg_coefficients(config.scheme)
        self.a, self.a_bar, self.b_bar = co.a, co.a_bar, co.b_bar
        self.alpha, self.beta = co.alpha, co.beta

    def _guess(self, q0, p0, prev):
        s, n = self.s, self.n
        Q = np.tile(q0, (s, 1))
        P = np.tile(p0, (s, 1))
        p1 = p0.copy()
        if prev is not None and self.config.predictor == "extrapolate":
            c = self.config.scheme.c
            for i in range(s):
                w = np.array([quad.lagrange_eval(c, j, 1.0 + c[i]) for j in range(s)])
                Q[i] = w @ prev.Q
                P[i] = w @ prev.P
        return np.concatenate([Q.ravel(), P.ravel(), p1])

    def step(self, q0, p0, U_stage, h, prev=None):
        s, n = self.s, self.n
        a, ab = self.a, self.a_bar
        al, be, bb = self.alpha, self.beta, self.b_bar

        def fun(x):
            Q = x[: s * n].reshape(s, n)
            P = x[s * n: 2 * s * n].reshape(s, n)
            p1 = x[2 * s * n:]
            fv = np.empty((s, n)); gv = np.empty((s, n))
            dfq = np.empty((s, n, n)); dfp = np.empty((s, n, n))
            dgq = np.empty((s, n, n)); dgp = np.empty((s, n, n))
            for j in range(s):
                fv[j] = self.rhs.f(Q[j], P[j])
                gv[j] = self.rhs.g(Q[j], P[j], U_stage[j])
                dfq[j], dfp[j] = self.rhs.f_jacobians(Q[j], P[j])
                dgq[j], dgp[j], _ = self.rhs.g_jacobians(Q[j], P[j], U_stage[j])
            r0 = q0 - al @ Q
            rf = fv - (a @ Q) / h
            rg = gv - (np.outer(be, p1) - np.outer(al, p0)) / (h * bb[:, None]) \
                - (ab @ P) / h
            dim = (2 * s + 1) * n
            J = np.zeros((dim, dim))
            I = np.eye(n)
            for j in range(s):
                J[0:n, j * n:(j + 1) * n] = -al[j] * I
            for i in range(s):
                ri = n + i * n
                gi = n + (s + i) * n
                for j in range(s):
                    d = 1.0 if i == j else 0.0
                    J[ri:ri + n, j * n:(j + 1) * n] = d * dfq[i] - (a[i, j] / h) * I
                    J[ri:ri + n, (s + j) * n:(s + j + 1) * n] = d * dfp[i]
                    J[gi:gi + n, j * n:(j + 1) * n] = d * dgq[i]
                    J[gi:gi + n, (s + j) * n:(s + j + 1) * n] = (
                        d * dgp[i] - (ab[i, j] / h) * I)
                J[gi:gi + n, 2 * s * n:] = -(be[i] / (h * bb[i])) * I
            return np.concatenate([r0, rf.ravel(), rg.ravel()]), J

        x = self._newton(self._guess(q0, p0, prev), fun, "sg_step")
        Q = x[: s * n].reshape(s, n)
        P = x[s * n: 2 * s * n].reshape(s, n)
        p1 = x[2 * s * n:]
        q1 = be @ Q
        fv = np.array([self.rhs.f(Q[j], P[j]) for j in range(s)])
        gv = np.array([self.rhs.g(Q[j], P[j], U_stage[j]) for j in range(s)])
        return q1, p1, StageBlock(Q=Q, P=P, Qdot=fv, Pdot=gv, U=np.array(U_stage))


def make_stepper(system, config):
    if SchemeKind(config.kind) is SchemeKind.SPRK:
        return SprkStepper(system, config)
    return SgStepper(system, config)


def sprk_step(system, config, q0, p0, U_stage, h):
    return SprkStepper(system, config).step(np.asarray(q0, float),
                                            np.asarray(p0, float), U_stage, h)


def sg_step(system, config, q0, p0, U_stage, h):
    return SgStepper(system, config).step(np.asarray(q0, float),
                                          np.asarray(p0, float), U_stage, h)


def integrate(system, config, q0, p0, control_fn, T, N):
    """N steps of size h = T/N; stage controls sampled at t_k + c_i h."""
    assert N >= 1
    h = T / N
    stepper = make_stepper(system, config)
    c = config.scheme.c
    m = system.dim_u
    q = np.empty((N + 1, system.dim_q))
    p = np.empty((N + 1, system.dim_q))
    q[0] = np.asarray(q0, float)
    p[0] = np.asarray(p0, float)
    stages = []
    prev = None
    for k in range(N):
        tk = k * h
        if m and control_fn is not None:
            U = np.array([np.atleast_1d(control_fn(tk + ci * h)) for ci in c],
                         dtype=float)
        else:
            U = np.zeros((config.scheme.s, m))
        try:
            q[k + 1], p[k + 1], blk = stepper.step(q[k], p[k], U, h, prev=prev)
        except (NoConvergence, SingularJacobian) as exc:
            raise type(exc)(f"step {k}: {exc}") from exc
        stages.append(blk)
        prev = blk
    return DiscreteTrajectory(h=h, N=N, times=h * np.arange(N + 1),
                              q=q, p=p, stages=stages)


def verlet_reference_step(system, q0, p0, h):
    """One explicit velocity-Verlet step for a separable unforced system.

    Kick-drift-kick with the force read off the configuration gradient of the
    Lagrangian at zero velocity and a constant mass matrix. Both schemes with
    the two-stage Lobatto nodes reduce to exactly this map.
    """
    q0 = np.asarray(q0, float)
    p0 = np.asarray(p0, float)
    zero = np.zeros_like(q0)
    M = system.d2L_dqdot2(q0, zero)
    p_half = p0 + 0.5 * h * system.dL_dq(q0, zero)
    q1 = q0 + h * np.linalg.solve(M, p_half)
    p1 = p_half + 0.5 * h * system.dL_dq(q1, zero)
    return q1, p1


def measure_order(problem, config, h_list, T):
    """Least-squares slope of log(global error at T) against log(h).

    The error is the infinity norm over the final (q, p) against the
    problem's exact flow. Raises if errors sit on the floating point floor.
    """
    h_list = np.asarray(sorted(h_list, reverse=True), float)
    assert len(h_list) >= 3
    errs = []
    for h in h_list:
        N = int(round(T / h))
        traj = integrate(problem.system, config, problem.q0, problem.p0,
                         problem.control, T, N)
        qe, pe = problem.exact(T)
        err = max(np.max(np.abs(traj.q[-1] - qe)), np.max(np.abs(traj.p[-1] - pe)))
        errs.append(err)
    errs = np.asarray(errs)
    if np.any(errs < 1e-13):
        raise DegenerateFit("errors at the floating point floor; enlarge h or T")
    slope = np.polyfit(np.log(h_list), np.log(errs), 1)[0]
    return float(slope), errs
