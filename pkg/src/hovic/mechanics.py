"""Controlled Lagrangian systems and their partitioned Hamiltonian-side dynamics.

A system provides the Lagrangian with hand-coded first and second derivatives
and a control-affine force F(q, qdot, u) = F0(q, qdot) + F1(q, qdot) @ u.
From those we build the right-hand sides

    qdot = f(q, p),   pdot = g(q, p, u)

together with all Jacobians needed by the Newton steppers and the KKT assembly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import NoConvergence, SingularMass

_Arr = np.ndarray


def _zeros_force(n, m):
    def f0(q, qd):
        return np.zeros(n)

    def f1(q, qd):
        return np.zeros((n, m))

    def dmat(q, qd):
        return np.zeros((n, n))

    def dten(q, qd):
        return np.zeros((n, m, n))

    return f0, f1, dmat, dmat, dten, dten


@dataclass(frozen=True)
class MechanicalSystem:
    name: str
    dim_q: int
    dim_u: int
    lagrangian: Callable[[_Arr, _Arr], float]
    dL_dq: Callable[[_Arr, _Arr], _Arr]
    dL_dqdot: Callable[[_Arr, _Arr], _Arr]
    d2L_dqdot2: Callable[[_Arr, _Arr], _Arr]
    d2L_dqdotdq: Callable[[_Arr, _Arr], _Arr]   # [i,j] = d2 L / (dqdot_i dq_j)
    d2L_dq2: Callable[[_Arr, _Arr], _Arr]
    force0: Callable[[_Arr, _Arr], _Arr] = None
    force1: Callable[[_Arr, _Arr], _Arr] = None          # (n, m)
    dF0_dq: Callable[[_Arr, _Arr], _Arr] = None          # (n, n)
    dF0_dqdot: Callable[[_Arr, _Arr], _Arr] = None
    dF1_dq: Callable[[_Arr, _Arr], _Arr] = None          # (n, m, n)
    dF1_dqdot: Callable[[_Arr, _Arr], _Arr] = None
    inverse_legendre_closed: Optional[Callable[[_Arr, _Arr], _Arr]] = None

    def __post_init__(self):
        if self.force0 is None:
            f0, f1, d0q, d0v, d1q, d1v = _zeros_force(self.dim_q, self.dim_u)
            object.__setattr__(self, "force0", f0)
            object.__setattr__(self, "force1", f1)
            object.__setattr__(self, "dF0_dq", d0q)
            object.__setattr__(self, "dF0_dqdot", d0v)
            object.__setattr__(self, "dF1_dq", d1q)
            object.__setattr__(self, "dF1_dqdot", d1v)

    def force(self, q, qd, u):
        out = self.force0(q, qd)
        if self.dim_u:
            out = out + self.force1(q, qd) @ u
        return out

    def no_control(self):
        return np.zeros(self.dim_u)


@dataclass(frozen=True)
class CostPair:
    """Running cost C(q, p, u) with gradients, and final cost Phi(q, p)."""
    C: Callable[[_Arr, _Arr, _Arr], float]
    dC_dq: Callable[[_Arr, _Arr, _Arr], _Arr]
    dC_dp: Callable[[_Arr, _Arr, _Arr], _Arr]
    dC_du: Callable[[_Arr, _Arr, _Arr], _Arr]
    d2C_du2: Callable[[_Arr, _Arr, _Arr], _Arr]
    Phi: Callable[[_Arr, _Arr], float]
    dPhi_dq: Callable[[_Arr, _Arr], _Arr]
    dPhi_dp: Callable[[_Arr, _Arr], _Arr]


def legendre(system, q, qdot):
    """Momentum p = dL/dqdot at (q, qdot)."""
    return system.dL_dqdot(np.asarray(q, float), np.asarray(qdot, float))


def inverse_legendre(system, q, p, tol=1e-12, max_iter=50, use_closed_form=True):
    """Velocity with legendre(q, qdot) == p.

    Uses the model's registered closed form when available, otherwise Newton
    iteration with the velocity Hessian.
    """
    q = np.asarray(q, float)
    p = np.asarray(p, float)
    if use_closed_form and system.inverse_legendre_closed is not None:
        return system.inverse_legendre_closed(q, p)
    qd = p.copy()
    for _ in range(max_iter):
        r = system.dL_dqdot(q, qd) - p
        if np.max(np.abs(r)) < tol:
            return qd
        M = system.d2L_dqdot2(q, qd)
        try:
            qd = qd - np.linalg.solve(M, r)
        except np.linalg.LinAlgError as exc:
            raise SingularMass(f"{system.name}: velocity Hessian solve failed") from exc
    r = system.dL_dqdot(q, qd) - p
    if np.max(np.abs(r)) < tol:
        return qd
    raise NoConvergence(f"{system.name}: inverse Legendre transform",
                        residual=float(np.max(np.abs(r))))


class PartitionedRhs:
    """Right-hand sides f(q,p), g(q,p,u) and their Jacobians."""

    def __init__(self, system):
        self.system = system

    def f(self, q, p):
        return inverse_legendre(self.system, q, p)

    def g(self, q, p, u):
        sys = self.system
        v = self.f(q, p)
        return sys.dL_dq(q, v) + sys.force(q, v, u)

    def _mass_solve(self, q, v, rhs):
        M = self.system.d2L_dqdot2(q, v)
        try:
            return np.linalg.solve(M, rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularMass(f"{self.system.name}: singular mass matrix") from exc

    def f_jacobians(self, q, p):
        """(df/dq, df/dp) by implicit differentiation through the mass matrix."""
        sys = self.system
        v = self.f(q, p)
        A = sys.d2L_dqdotdq(q, v)
        df_dp = self._mass_solve(q, v, np.eye(sys.dim_q))
        df_dq = -self._mass_solve(q, v, A)
        return df_dq, df_dp

    def g_jacobians(self, q, p, u):
        """(dg/dq, dg/dp, dg/du) with the chain rule through f."""
        sys = self.system
        v = self.f(q, p)
        df_dq, df_dp = self.f_jacobians(q, p)
        A = sys.d2L_dqdotdq(q, v)
        # partials of g's integrand at fixed v
        Gq = sys.d2L_dq2(q, v) + sys.dF0_dq(q, v)
        Gv = A.T + sys.dF0_dqdot(q, v)
        if sys.dim_u:
            Gq = Gq + np.einsum("a,iaj->ij", u, sys.dF1_dq(q, v))
            Gv = Gv + np.einsum("a,iaj->ij", u, sys.dF1_dqdot(q, v))
        dg_dq = Gq + Gv @ df_dq
        dg_dp = Gv @ df_dp
        dg_du = sys.force1(q, v) if sys.dim_u else np.zeros((sys.dim_q, 0))
        return dg_dq, dg_dp, dg_du


def rhs(system):
    return PartitionedRhs(system)


# ---------------------------------------------------------------------------
# model zoo
# ---------------------------------------------------------------------------

def _harmonic():
    return MechanicalSystem(
        name="harmonic", dim_q=1, dim_u=0,
        lagrangian=lambda q, v: float(0.5 * v @ v - 0.5 * q @ q),
        dL_dq=lambda q, v: -q,
        dL_dqdot=lambda q, v: v.copy(),
        d2L_dqdot2=lambda q, v: np.eye(1),
        d2L_dqdotdq=lambda q, v: np.zeros((1, 1)),
        d2L_dq2=lambda q, v: -np.eye(1),
        inverse_legendre_closed=lambda q, p: p.copy(),
    )


_KEPLER_RMIN = 1e-8


def _kepler_r(q):
    r = float(np.linalg.norm(q))
    if r < _KEPLER_RMIN:
        raise ValueError("kepler: separation below 1e-8")
    return r


def _kepler():
    # planar two-body problem in relative coordinates, unit reduced mass
    def dL_dq(q, v):
        r = _kepler_r(q)
        return -q / r ** 3

    def d2L_dq2(q, v):
        r = _kepler_r(q)
        return -np.eye(2) / r ** 3 + 3.0 * np.outer(q, q) / r ** 5

    return MechanicalSystem(
        name="kepler", dim_q=2, dim_u=0,
        lagrangian=lambda q, v: float(0.5 * v @ v + 1.0 / _kepler_r(q)),
        dL_dq=dL_dq,
        dL_dqdot=lambda q, v: v.copy(),
        d2L_dqdot2=lambda q, v: np.eye(2),
        d2L_dqdotdq=lambda q, v: np.zeros((2, 2)),
        d2L_dq2=d2L_dq2,
        inverse_legendre_closed=lambda q, p: p.copy(),
    )


def _hager():
    # L = qdot^2/2 + q with unit control force, i.e. qddot = 1 + u
    sys = MechanicalSystem(
        name="hager", dim_q=1, dim_u=1,
        lagrangian=lambda q, v: float(0.5 * v @ v + q.sum()),
        dL_dq=lambda q, v: np.ones(1),
        dL_dqdot=lambda q, v: v.copy(),
        d2L_dqdot2=lambda q, v: np.eye(1),
        d2L_dqdotdq=lambda q, v: np.zeros((1, 1)),
        d2L_dq2=lambda q, v: np.zeros((1, 1)),
        force0=lambda q, v: np.zeros(1),
        force1=lambda q, v: np.eye(1),
        dF0_dq=lambda q, v: np.zeros((1, 1)),
        dF0_dqdot=lambda q, v: np.zeros((1, 1)),
        dF1_dq=lambda q, v: np.zeros((1, 1, 1)),
        dF1_dqdot=lambda q, v: np.zeros((1, 1, 1)),
        inverse_legendre_closed=lambda q, p: p.copy(),
    )
    return sys


def hager_cost():
    """Quadratic running cost p^2 + u^2 of the linear benchmark problem."""
    return CostPair(
        C=lambda q, p, u: float(p @ p + u @ u),
        dC_dq=lambda q, p, u: np.zeros(1),
        dC_dp=lambda q, p, u: 2.0 * p,
        dC_du=lambda q, p, u: 2.0 * u,
        d2C_du2=lambda q, p, u: 2.0 * np.eye(1),
        Phi=lambda q, p: 0.0,
        dPhi_dq=lambda q, p: np.zeros(1),
        dPhi_dp=lambda q, p: np.zeros(1),
    )


def _scalarmass():
    # L = lam(q) qdot^2 / 2 - V(q) with lam = 1 + q^2/2, V = q^2/2
    lam = lambda q: 1.0 + 0.5 * float(q @ q)
    return MechanicalSystem(
        name="scalarmass", dim_q=1, dim_u=0,
        lagrangian=lambda q, v: float(0.5 * lam(q) * (v @ v) - 0.5 * q @ q),
        dL_dq=lambda q, v: 0.5 * float(v @ v) * q - q,
        dL_dqdot=lambda q, v: lam(q) * v,
        d2L_dqdot2=lambda q, v: lam(q) * np.eye(1),
        d2L_dqdotdq=lambda q, v: np.outer(v, q),
        d2L_dq2=lambda q, v: (0.5 * float(v @ v) - 1.0) * np.eye(1),
        inverse_legendre_closed=lambda q, p: p / lam(q),
    )


@dataclass(frozen=True)
class BenchmarkProblem:
    """A system with reference initial data, and an exact flow when known."""
    system: MechanicalSystem
    q0: _Arr
    p0: _Arr
    exact: Optional[Callable[[float], tuple]] = None
    cost: Optional[CostPair] = None
    control: Optional[Callable[[float], _Arr]] = None


def builtin_models():
    """Catalog of the bundled models, keyed by CLI id."""
    harm = BenchmarkProblem(
        system=_harmonic(), q0=np.array([1.0]), p0=np.array([0.0]),
        exact=lambda t: (np.array([np.cos(t)]), np.array([-np.sin(t)])),
    )
    kep = BenchmarkProblem(
        system=_kepler(), q0=np.array([1.0, 0.0]), p0=np.array([0.0, 1.0]),
        exact=lambda t: (np.array([np.cos(t), np.sin(t)]),
                         np.array([-np.sin(t), np.cos(t)])),
    )
    hager = BenchmarkProblem(
        system=_hager(), q0=np.array([0.0]), p0=np.array([0.0]),
        cost=hager_cost(),
    )
    scalarmass = BenchmarkProblem(
        system=_scalarmass(), q0=np.array([0.4]), p0=np.array([0.8]),
    )
    return {"harmonic": harm, "kepler": kep, "hager": hager,
            "scalarmass": scalarmass}


def hager_exact(T):
    """Exact optimal state, control and momentum of the linear benchmark."""
    chT = np.cosh(T)
    q = lambda t: (np.cosh(t) - 1.0) / chT
    u = lambda t: np.cosh(t) / chT - 1.0
    p = lambda t: np.sinh(t) / chT
    return q, u, p


def energy(system, q, p):
    """Total energy p . f(q,p) - L(q, f(q,p)) at a phase-space point."""
    v = inverse_legendre(system, q, p)
    return float(p @ v) - system.lagrangian(q, v)
