"""Collocation nodes, weights and the coefficient tables of both integrator families.

Nodes live on [0, 1]. Gauss-Legendre, Gauss-Lobatto and Radau nodes are found by
Newton iteration on the orthogonal-polynomial conditions, started from Chebyshev
guesses and converged to 1e-14; weights come from the standard closed forms.
The Chebyshev family uses Chebyshev-Gauss-Lobatto points with their interpolatory
(Clenshaw-Curtis) weights. Radau is the right-handed variant (c_s = 1).
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DegenerateNodes, UnsupportedStageCount, ZeroWeight

_NEWTON_TOL = 1e-14


class Family(str, Enum):
    GAUSS_LEGENDRE = "gauss"
    GAUSS_LOBATTO = "lobatto"
    RADAU = "radau"
    CHEBYSHEV = "chebyshev"


@dataclass(frozen=True)
class CollocationScheme:
    family: Family
    s: int
    c: np.ndarray  # ascending nodes in [0, 1]
    b: np.ndarray  # quadrature weights, sum to 1

    def __post_init__(self):
        self.c.setflags(write=False)
        self.b.setflags(write=False)


@dataclass(frozen=True)
class SprkCoefficients:
    a: np.ndarray      # a_ij = integral of l^j over [0, c_i]
    a_bar: np.ndarray  # conjugate table: b_i abar_ij + bbar_j a_ji = b_i bbar_j
    b_bar: np.ndarray


@dataclass(frozen=True)
class SgCoefficients:
    a: np.ndarray      # a_ij = d l^j/dt at c_i
    a_bar: np.ndarray  # conjugate table: b_i a_ij + bbar_j abar_ji = 0
    b_bar: np.ndarray
    alpha: np.ndarray  # l^j(0)
    beta: np.ndarray   # l^j(1)
    gamma: float       # alpha_1 beta_s - alpha_s beta_1


def _legendre(n, x):
    """Values of P_n and P_n' at x (scalar or array), by the three-term recurrence."""
    x = np.asarray(x, dtype=float)
    p0 = np.ones_like(x)
    if n == 0:
        return p0, np.zeros_like(x)
    p1 = x.copy()
    for k in range(1, n):
        p0, p1 = p1, ((2 * k + 1) * x * p1 - k * p0) / (k + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        dp = n * (x * p1 - p0) / (x * x - 1.0)
    return p1, dp


def _newton_roots(f, x0):
    x = np.asarray(x0, dtype=float).copy()
    for _ in range(100):
        val, dval = f(x)
        dx = val / dval
        x -= dx
        if np.max(np.abs(dx)) < _NEWTON_TOL:
            break
    return x


def _gauss_nodes(s):
    i = np.arange(1, s + 1)
    x0 = np.cos(np.pi * (4 * i - 1) / (4 * s + 2))
    x = _newton_roots(lambda x: _legendre(s, x), x0)
    _, dp = _legendre(s, x)
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    order = np.argsort(x)
    return x[order], w[order]


def _lobatto_nodes(s):
    # interior nodes are the roots of P'_{s-1}
    n = s - 1

    def dpoly(x):
        p, dp = _legendre(n, x)
        ddp = (2 * x * dp - n * (n + 1) * p) / (1.0 - x * x)
        return dp, ddp

    if s > 2:
        x0 = np.cos(np.pi * np.arange(1, s - 1) / n)
        xi = _newton_roots(dpoly, x0)
    else:
        xi = np.empty(0)
    x = np.concatenate(([-1.0], np.sort(xi), [1.0]))
    p, _ = _legendre(n, x)
    w = 2.0 / (s * n * p * p)
    return x, w


def _radau_nodes(s):
    # left-Radau on [-1, 1]: x = -1 plus the interior roots of P_{s-1} + P_s,
    # then mirrored so that the right endpoint is included.
    def poly(x):
        p0, dp0 = _legendre(s - 1, x)
        p1, dp1 = _legendre(s, x)
        return p0 + p1, dp0 + dp1

    if s > 1:
        k = np.arange(1, s)
        x0 = -np.cos(2.0 * np.pi * k / (2 * s - 1))
        xi = np.sort(_newton_roots(poly, x0))
    else:
        xi = np.empty(0)
    x = np.concatenate(([-1.0], xi))
    w = np.empty(s)
    w[0] = 2.0 / (s * s)
    if s > 1:
        p, _ = _legendre(s - 1, xi)
        w[1:] = (1.0 - xi) / (s * s * p * p)
    return -x[::-1], w[::-1]


def _chebyshev_nodes(s):
    k = np.arange(s)
    x = -np.cos(np.pi * k / (s - 1))
    return x, None  # weights are filled in interpolatorily


def lagrange_eval(c, j, t):
    """Value at t of the j-th (0-based) Lagrange basis polynomial on nodes c."""
    c = np.asarray(c, dtype=float)
    val = 1.0
    for i in range(len(c)):
        if i != j:
            val *= (t - c[i]) / (c[j] - c[i])
    return val


def lagrange_deriv(c, j, t):
    """Derivative at t of the j-th (0-based) Lagrange basis polynomial on nodes c."""
    c = np.asarray(c, dtype=float)
    total = 0.0
    for k in range(len(c)):
        if k == j:
            continue
        term = 1.0 / (c[j] - c[k])
        for i in range(len(c)):
            if i != j and i != k:
                term *= (t - c[i]) / (c[j] - c[i])
        total += term
    return total


def _gauss_panel(lo, hi, npts):
    x, w = _gauss_nodes(npts)
    return lo + (hi - lo) * (x + 1.0) / 2.0, w * (hi - lo) / 2.0


def integrate_lagrange(c, j, lo, hi):
    """Exact integral of the j-th Lagrange basis polynomial over [lo, hi]."""
    s = len(c)
    npts = s // 2 + 1  # Gauss with npts points is exact up to degree 2*npts-1 >= s-1
    x, w = _gauss_panel(lo, hi, npts)
    return float(np.dot(w, [lagrange_eval(c, j, xi) for xi in x]))


def make_scheme(family, s):
    """Nodes and weights for the named quadrature family with s stages."""
    family = Family(family)
    if s < 1:
        raise UnsupportedStageCount(f"s={s} < 1")
    if family in (Family.GAUSS_LOBATTO, Family.CHEBYSHEV) and s < 2:
        raise UnsupportedStageCount(f"{family.value} needs s >= 2, got {s}")

    if family is Family.GAUSS_LEGENDRE:
        x, w = _gauss_nodes(s)
    elif family is Family.GAUSS_LOBATTO:
        x, w = _lobatto_nodes(s)
    elif family is Family.RADAU:
        x, w = _radau_nodes(s)
    else:
        x, w = _chebyshev_nodes(s)

    c = (x + 1.0) / 2.0
    if family is Family.GAUSS_LOBATTO or family is Family.CHEBYSHEV:
        c[0], c[-1] = 0.0, 1.0
    if family is Family.RADAU:
        c[-1] = 1.0
    if w is None:
        b = np.array([integrate_lagrange(c, j, 0.0, 1.0) for j in range(s)])
    else:
        b = w / 2.0
    return CollocationScheme(family=family, s=s, c=c, b=b)


def sprk_coefficients(scheme):
    """Coefficient tables of the partitioned Runge-Kutta form.

    a_ij integrates the j-th basis polynomial over [0, c_i]; the conjugate
    table is solved elementwise from b_i abar_ij + bbar_j a_ji = b_i bbar_j.
    """
    c, b, s = scheme.c, scheme.b, scheme.s
    if np.any(b == 0.0):
        raise ZeroWeight("conjugate coefficients need nonzero weights")
    a = np.array([[integrate_lagrange(c, j, 0.0, c[i]) for j in range(s)]
                  for i in range(s)])
    b_bar = b.copy()
    a_bar = b_bar[None, :] - (b_bar[None, :] / b[:, None]) * a.T
    return SprkCoefficients(a=a, a_bar=a_bar, b_bar=b_bar)


def sg_coefficients(scheme):
    """Coefficient tables of the symplectic Galerkin form.

    a_ij differentiates the j-th basis polynomial at c_i; alpha/beta evaluate
    the basis at the interval ends; the conjugate table is solved elementwise
    from b_i a_ij + bbar_j abar_ji = 0.
    """
    c, b, s = scheme.c, scheme.b, scheme.s
    if c[0] == c[-1]:
        raise DegenerateNodes("c_1 == c_s")
    if np.any(b == 0.0):
        raise ZeroWeight("conjugate coefficients need nonzero weights")
    a = np.array([[lagrange_deriv(c, j, c[i]) for j in range(s)]
                  for i in range(s)])
    alpha = np.array([lagrange_eval(c, j, 0.0) for j in range(s)])
    beta = np.array([lagrange_eval(c, j, 1.0) for j in range(s)])
    b_bar = b.copy()
    a_bar = -(b[None, :] / b_bar[:, None]) * a.T  # abar_ji = -(b_i/bbar_j) a_ij
    gamma = alpha[0] * beta[-1] - alpha[-1] * beta[0]
    return SgCoefficients(a=a, a_bar=a_bar, b_bar=b_bar,
                          alpha=alpha, beta=beta, gamma=float(gamma))
