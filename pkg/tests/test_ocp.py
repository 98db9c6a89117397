import numpy as np
import pytest

from hovic import quadrature as quad
from hovic.errors import DimensionMismatch, SingularKkt, UnknownVariant
from hovic.integrators import SchemeKind
from hovic.mechanics import builtin_models, hager_exact
from hovic.ocp import (NONCOERCIVE_VARIANTS, OcpDefinition, hager_cost_variant,
                       hager_ocp, lobatto_cost_rule, solve_kkt, transcribe)

ALL_VARIANTS = ["c3t1", "c3t2", "c3t3", "c3t4", "c2t1", "c2t2", "c2t3", "c2t4"]


def _sprk_hager(N=8):
    b = builtin_models()["hager"]
    return OcpDefinition(system=b.system, cost=b.cost, q0=b.q0, p0=b.p0,
                         T=1.0, N=N, kind=SchemeKind.SPRK,
                         scheme=quad.make_scheme("lobatto", 3))


def test_layout_counts():
    tr = transcribe(hager_ocp(T=1.0, N=5, variant="c3t3"))
    L = tr.layout
    assert L.nvar == 2 * 6 * 1 + 2 * 5 * 3 * 1 + 5 * 3 * 1
    assert L.ncon == 6 * 1 + 1 + 5 * 1 + 2 * 5 * 3 * 1
    # degrees of freedom left after the dynamics constraints = control count
    assert L.nvar - L.ncon == 5 * 3 * 1


def test_pack_unpack_roundtrip():
    tr = transcribe(hager_ocp(T=1.0, N=4, variant="c2t2"))
    rng = np.random.default_rng(31)
    z = rng.normal(size=tr.layout.nvar)
    assert np.array_equal(tr.pack(*tr.unpack(z)), z)


def test_lobatto_cost_rules():
    e1, w1 = lobatto_cost_rule(1)
    assert np.allclose(e1, [0.5]) and np.allclose(w1, [1.0])
    e2, w2 = lobatto_cost_rule(2)
    assert np.allclose(e2, [0.0, 1.0]) and np.allclose(w2, [0.5, 0.5])
    e3, w3 = lobatto_cost_rule(3)
    assert np.allclose(w3, [1 / 6, 2 / 3, 1 / 6])


@pytest.mark.parametrize("variant", ALL_VARIANTS)
def test_variant_formula_matches_generic_cost(variant):
    ocp = hager_ocp(T=1.0, N=2, variant=variant)
    tr = transcribe(ocp)
    rng = np.random.default_rng(32)
    z = rng.normal(size=tr.layout.nvar)
    _, _, Q, P, U = tr.unpack(z)
    # for this model the stage velocity equals the stage momentum
    direct = sum(hager_cost_variant(variant, P[k][:, 0], U[k][:, 0], ocp.h)
                 for k in range(2))
    assert abs(direct - tr.cost(z)) < 1e-12


def test_unknown_variant_rejected():
    with pytest.raises(UnknownVariant):
        hager_ocp(variant="c4t1")
    with pytest.raises(UnknownVariant):
        hager_cost_variant("bogus", np.zeros(3), np.zeros(3), 0.1)
    with pytest.raises(DimensionMismatch):
        hager_cost_variant("c2t2", np.zeros(3), np.zeros(3), 0.1)


@pytest.mark.parametrize("kind", [SchemeKind.SG, SchemeKind.SPRK])
def test_constraint_jacobian_matches_fd(kind):
    ocp = hager_ocp(T=1.0, N=2, variant="c3t3") if kind is SchemeKind.SG \
        else _sprk_hager(N=2)
    tr = transcribe(ocp)
    rng = np.random.default_rng(33)
    z = rng.normal(size=tr.layout.nvar)
    J = tr.jacobian(z)
    eps = 1e-6
    for j in range(tr.layout.nvar):
        zp = z.copy(); zp[j] += eps
        zm = z.copy(); zm[j] -= eps
        fd = (tr.residual(zp) - tr.residual(zm)) / (2 * eps)
        assert np.max(np.abs(J[:, j] - fd)) < 1e-6


def test_cost_gradient_and_hessian_match_fd():
    tr = transcribe(hager_ocp(T=1.0, N=2, variant="c3t4"))
    rng = np.random.default_rng(34)
    z = rng.normal(size=tr.layout.nvar)
    m = rng.normal(size=tr.layout.ncon)
    eps = 1e-6
    g = tr.cost_gradient(z)
    H = tr.lagrangian_hessian(z, m)
    for j in range(tr.layout.nvar):
        zp = z.copy(); zp[j] += eps
        zm = z.copy(); zm[j] -= eps
        assert abs(g[j] - (tr.cost(zp) - tr.cost(zm)) / (2 * eps)) < 1e-6
        fd = (tr.lagrangian_gradient(zp, m) - tr.lagrangian_gradient(zm, m)) / (2 * eps)
        assert np.max(np.abs(H[:, j] - fd)) < 1e-5


def test_forward_sim_initializer_is_feasible():
    tr = transcribe(hager_ocp(T=1.0, N=4, variant="c3t3"))
    from hovic.ocp import _initial_primal
    z0 = _initial_primal(tr, "forward-sim")
    # with zero controls the dynamics constraints are already satisfied
    assert np.max(np.abs(tr.residual(z0))) < 1e-9


def test_solve_kkt_sg_reaches_exact_solution():
    sol = solve_kkt(transcribe(hager_ocp(T=1.0, N=16, variant="c3t3")))
    assert sol.residual < 1e-10
    assert not sol.diverged
    qx, ux, _ = hager_exact(1.0)
    tt = np.linspace(0, 1, 17)
    assert np.max(np.abs(sol.q[:, 0] - qx(tt))) < 1e-7
    assert abs(sol.U_stage[0, 0, 0] - ux(0.0)) < 1e-6
    # stationarity ties the step and macro multipliers together
    assert np.max(np.abs(sol.mu - sol.lam[:-1])) < 1e-12
    assert np.max(np.abs(sol.lam[-1])) < 1e-12


def test_solve_kkt_sprk_reaches_exact_solution():
    sol = solve_kkt(transcribe(_sprk_hager(N=16)))
    qx, _, _ = hager_exact(1.0)
    tt = np.linspace(0, 1, 17)
    assert np.max(np.abs(sol.q[:, 0] - qx(tt))) < 1e-7


def test_zeros_initializer_converges_on_lq():
    sol = solve_kkt(transcribe(hager_ocp(T=1.0, N=4, variant="c3t3")),
                    init_strategy="zeros")
    assert sol.residual < 1e-10


@pytest.mark.parametrize("variant", sorted(NONCOERCIVE_VARIANTS))
def test_noncoercive_variants_are_singular(variant):
    with pytest.raises(SingularKkt):
        solve_kkt(transcribe(hager_ocp(T=1.0, N=8, variant=variant)))


@pytest.mark.parametrize("variant", [v for v in ALL_VARIANTS
                                     if v not in NONCOERCIVE_VARIANTS])
def test_coercive_variants_bounded(variant):
    sol = solve_kkt(transcribe(hager_ocp(T=1.0, N=8, variant=variant)))
    assert not sol.diverged
    assert sol.max_control < 1.0


def test_sprk_transcription_needs_stage_nodes():
    b = builtin_models()["hager"]
    e, w = lobatto_cost_rule(4)
    ocp = OcpDefinition(system=b.system, cost=b.cost, q0=b.q0, p0=b.p0,
                        T=1.0, N=4, kind=SchemeKind.SPRK,
                        scheme=quad.make_scheme("lobatto", 3),
                        cost_nodes=e, cost_weights=w)
    with pytest.raises(DimensionMismatch):
        transcribe(ocp)
