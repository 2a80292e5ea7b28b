import math
from types import SimpleNamespace

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from hypothesis import given, settings
from hypothesis import strategies as st

from biotfem.biot import (
    ALL_ERROR_KEYS,
    BREZZI_PITKARANTA,
    P1P0_STAB,
    TAYLOR_HOOD,
    BiotState,
    DirectSolver,
    ErrorReport,
    algebraic_residual,
    assemble_operators,
    build_preconditioner,
    build_static_system,
    compatible_initial_data,
    energy_check,
    error_norms,
    get_discretization,
    infsup_estimate,
    l2_norm,
    manufactured_problem,
    min_generalized_singular_value,
    momentum_and_pressure_loads,
    run_manufactured,
    step,
)
from biotfem.fem import interpolate
from biotfem.forms import ModelParams
from biotfem.mesh import unit_square_mesh
from biotfem.solvers import SingularBlockError, minres

METHODS = ["taylor-hood", "brezzi-pitkaranta", "p1-p0"]


def test_discretization_lookup():
    assert get_discretization("TH") is TAYLOR_HOOD
    assert get_discretization("bp") is BREZZI_PITKARANTA
    assert get_discretization("P1P0") is P1P0_STAB
    assert get_discretization(TAYLOR_HOOD) is TAYLOR_HOOD
    assert not TAYLOR_HOOD.stabilized and BREZZI_PITKARANTA.stabilized
    with pytest.raises(ValueError):
        get_discretization("mini")


def test_free_dof_count_taylor_hood():
    sys_ = build_static_system(unit_square_mesh(2), "taylor-hood", ModelParams())
    assert [len(f) for f in sys_.free] == [30, 9, 1]
    assert sys_.matrix().shape == (40, 40)


@settings(max_examples=15, deadline=None)
@given(
    st.sampled_from(METHODS),
    st.floats(1e-3, 1e6),
    st.sampled_from([0.0, 1e-6, 1.0, 1e3]),
    st.floats(0.0, 2.0),
    st.floats(1e-9, 1e2),
)
def test_static_operator_symmetric(method, mu, lam_inv, s0, kappa):
    p = ModelParams(mu=mu, lam_inv=lam_inv, s0=s0 + 0.1, kappa=kappa, alpha=0.8, gamma2=2.0)
    A = build_static_system(unit_square_mesh(3), method, p).matrix()
    assert abs(A - A.T).max() == 0


@pytest.mark.parametrize("method", METHODS)
def test_incompressible_limit_blocks_vanish(method):
    ops = assemble_operators(unit_square_mesh(3), method, ModelParams(lam_inv=0.0))
    blocks = ops.block_system().blocks
    assert abs(blocks[1][2]).max() == 0
    if ops.S is None:
        assert abs(blocks[1][1]).max() == 0


def solve_static(method, params, rhs_seed=0, N=4):
    sys_ = build_static_system(unit_square_mesh(N), method, params)
    A = sys_.matrix()
    b = np.random.default_rng(rhs_seed).uniform(-1, 1, A.shape[0])
    return sys_, spla.spsolve(A.tocsc(), b), b


@pytest.mark.parametrize("method", METHODS)
def test_incompressible_limit_continuity(method):
    sys0, x0, _ = solve_static(method, ModelParams(lam_inv=0.0))
    _, x1, _ = solve_static(method, ModelParams(lam_inv=1e-14))
    assert np.all(np.isfinite(x0))
    for a, b in zip(sys0.split(x0), sys0.split(x1)):
        assert np.linalg.norm(a - b) <= 1e-8 * max(1.0, np.linalg.norm(a))


def test_stokes_decoupling():
    params = ModelParams(lam_inv=0.0, s0=1.0)
    sys_, x, b = solve_static("taylor-hood", params)
    u, pt, pp = sys_.split(x)
    # Stokes subproblem alone
    A, BT = sys_.blocks[0][0], sys_.blocks[0][1]
    B = sys_.blocks[1][0]
    S = sp.bmat([[A, BT], [B, None]], format="csc")
    nu, nt = len(u), len(pt)
    xs = spla.spsolve(S, b[: nu + nt])
    np.testing.assert_allclose(xs[:nu], u, atol=1e-10)
    np.testing.assert_allclose(xs[nu:], pt, atol=1e-10)
    Kpp = sys_.blocks[2][2]
    np.testing.assert_allclose(spla.spsolve(Kpp.tocsc(), b[nu + nt:]), pp, atol=1e-12)


# ---------------------------------------------------------------------------
# manufactured problem


def test_manufactured_point_values():
    prob = manufactured_problem()
    assert prob.pt(0.0, 0.0, 0.0) == pytest.approx(15 * math.pi * math.sin(1), rel=1e-14)
    assert prob.pt(0.0, 0.0, 0.0) == pytest.approx(39.6534, abs=5e-5)
    assert prob.g(1.0, 1.0, 0.0) == pytest.approx(math.cos(1) * (1 - math.pi) - 4, rel=1e-14)
    assert prob.g(1.0, 1.0, 0.0) == pytest.approx(-5.157, abs=5e-4)
    # div u = pi cos(pi x) sin(1 + t) + cos(y) sin(t): both terms vanish at (0.5, 0, 0)
    assert abs(prob.div_u(0.5, 0.0, 0.0)) < 1e-15
    assert prob.div_u(0.0, 0.0, 0.0) == pytest.approx(math.pi * math.sin(1), rel=1e-15)
    assert prob.div_u(0.5, 0.0, math.pi / 2) == pytest.approx(1.0, rel=1e-15)


def central(fn, h=1e-5):
    return (fn(h) - fn(-h)) / (2 * h)


def test_manufactured_data_consistent():
    """f and g match the differential operators applied to u and p_p (finite differences)."""
    prob = manufactured_problem()
    p = prob.params
    rng = np.random.default_rng(0)
    for x, y, t in rng.uniform(0.1, 0.9, size=(5, 3)):
        def sigma(x, y):
            (ux, uy), (vx, vy) = prob.grad_u(x, y, t)
            exy = 0.5 * (uy + vx)
            pt = prob.pt(x, y, t)
            return np.array([[2 * p.mu * ux + pt, 2 * p.mu * exy], [2 * p.mu * exy, 2 * p.mu * vy + pt]])

        div = central(lambda h: sigma(x + h, y)[:, 0]) + central(lambda h: sigma(x, y + h)[:, 1])
        np.testing.assert_allclose(prob.f(x, y, t), -div, rtol=1e-7, atol=1e-7)
        lap = central(lambda h: prob.grad_pp(x + h, y, t)[0]) + central(lambda h: prob.grad_pp(x, y + h, t)[1])
        g = (p.s0 * central(lambda h: prob.pp(x, y, t + h)) + p.alpha * central(lambda h: prob.div_u(x, y, t + h))
             - p.kappa * lap)
        assert prob.g(x, y, t) == pytest.approx(g, rel=1e-7, abs=1e-7)
        # p_t = lambda div u - alpha p_p
        assert prob.pt(x, y, t) == pytest.approx(p.lam * prob.div_u(x, y, t) - p.alpha * prob.pp(x, y, t), rel=1e-14)
        # grad u by finite differences
        gu = prob.grad_u(x, y, t)
        np.testing.assert_allclose(central(lambda h: np.array(prob.u(x + h, y, t))), [gu[0][0], gu[1][0]], atol=1e-8)
        np.testing.assert_allclose(central(lambda h: np.array(prob.u(x, y + h, t))), [gu[0][1], gu[1][1]], atol=1e-8)


def test_manufactured_traction():
    prob = manufactured_problem()
    p = prob.params
    x, y, t = 0.3, 1.0, 0.2
    (ux, uy), (vx, vy) = prob.grad_u(x, y, t)
    exy = 0.5 * (uy + vx)
    pt = prob.pt(x, y, t)
    tx, ty = prob.traction(x, y, t, 0.0, 1.0)
    assert tx == pytest.approx(2 * p.mu * exy, rel=1e-14)
    assert ty == pytest.approx(2 * p.mu * vy + pt, rel=1e-14)


def test_manufactured_requires_finite_lambda():
    with pytest.raises(ValueError):
        manufactured_problem(ModelParams(lam_inv=0.0))


# ---------------------------------------------------------------------------
# errors


def polynomial_problem():
    return SimpleNamespace(
        u=lambda x, y, t: (x * y, x**2 - y),
        grad_u=lambda x, y, t: ((y, x), (2 * x, -1 + 0 * y)),
        pt=lambda x, y, t: 2 * x - y,
        pp=lambda x, y, t: 1 + x + 3 * y,
        grad_pp=lambda x, y, t: (1 + 0 * x, 3 + 0 * y),
    )


def test_error_of_exact_interpolant_is_zero():
    ops = assemble_operators(unit_square_mesh(3), "taylor-hood", ModelParams())
    prob = polynomial_problem()
    state = BiotState(0.0, *(interpolate(sp_, fn, 0.0) for sp_, fn in zip(ops.spaces, (prob.u, prob.pt, prob.pp))))
    errs = error_norms(ops, state, prob)
    assert set(errs) == set(ALL_ERROR_KEYS)
    assert max(errs.values()) < 1e-13


def test_l2_norm_of_x2y2():
    # x^4 y^4 has degree 8, so the degree-5 rule is only accurate to O(h^6)
    ops = assemble_operators(unit_square_mesh(16), "taylor-hood", ModelParams())
    n = ops.spaces[2].num_dofs
    assert l2_norm(ops, 2, np.zeros(n), lambda x, y, t: x**2 * y**2) == pytest.approx(0.2, rel=1e-9)


def test_error_norms_reject_low_degree():
    ops = assemble_operators(unit_square_mesh(2), "taylor-hood", ModelParams())
    state = BiotState(0.0, *(np.zeros(s.num_dofs) for s in ops.spaces))
    with pytest.raises(ValueError):
        error_norms(ops, state, polynomial_problem(), degree=3)


def test_weighted_norm_relations():
    """u_V is the (2 mu)^{1/2} energy norm and pt_Qt the (2 mu)^{-1/2} L2 norm."""
    ops = assemble_operators(unit_square_mesh(3), "taylor-hood", ModelParams(mu=10.0))
    prob = polynomial_problem()
    zero = BiotState(0.0, *(np.zeros(s.num_dofs) for s in ops.spaces))
    errs = error_norms(ops, zero, prob)
    assert errs["pt_Qt"] == pytest.approx(errs["pt_L2"] / math.sqrt(20.0), rel=1e-14)
    u = interpolate(ops.spaces[0], prob.u, 0.0)
    assert errs["u_V"] == pytest.approx(math.sqrt(u @ ops.A @ u), rel=1e-12)


def test_error_report_rates():
    rep = ErrorReport()
    for N, e in ((8, 1.0), (16, 0.25), (32, 0.125)):
        rep.add(N, {k: e for k in ALL_ERROR_KEYS})
    assert rep.rates("u_V") == [None, pytest.approx(2.0), pytest.approx(1.0)]


# ---------------------------------------------------------------------------
# initial data and stepping


@pytest.mark.parametrize("method", METHODS)
def test_compatible_initial_data_zero(method):
    ops = assemble_operators(unit_square_mesh(3), method, ModelParams())
    st0 = compatible_initial_data(ops)
    assert not (st0.u.any() or st0.pt.any() or st0.pp.any())


@pytest.mark.parametrize("method", METHODS)
def test_compatible_initial_data_residual(method):
    prob = manufactured_problem()
    ops = assemble_operators(unit_square_mesh(6), method, prob.params.with_(dt=1 / 36))
    st0 = compatible_initial_data(ops, prob.f, prob.pt, prob.pp, u_bc=prob.u, traction=prob.traction)
    assert algebraic_residual(ops, st0, prob.f, prob.traction) <= 1e-9


def test_initial_pore_pressure_second_order():
    prob = manufactured_problem()
    errs = []
    for N in (8, 16):
        ops = assemble_operators(unit_square_mesh(N), "taylor-hood", prob.params.with_(dt=1 / N**2))
        st0 = compatible_initial_data(ops, prob.f, prob.pt, prob.pp, u_bc=prob.u, traction=prob.traction)
        errs.append(l2_norm(ops, 2, st0.pp, prob.pp, 0.0))
    assert math.log2(errs[0] / errs[1]) > 1.8


@pytest.mark.parametrize("method", METHODS)
def test_step_zero_is_zero(method):
    sys_ = build_static_system(unit_square_mesh(3), method, ModelParams(dt=0.1))
    ops = sys_.ops
    zero = BiotState(0.0, *(np.zeros(s.num_dofs) for s in ops.spaces))
    new, _ = step(sys_, DirectSolver.for_system(sys_), zero, 0.1, [np.zeros(s.num_dofs) for s in ops.spaces])
    assert not (new.u.any() or new.pt.any() or new.pp.any())


def steady_problem(p):
    """Steady fields inside the Taylor-Hood spaces: u = (x^2, 0), p_p = y."""
    lam, mu, a = p.lam, p.mu, p.alpha
    return SimpleNamespace(
        u=lambda x, y, t: (x**2, 0 * x),
        pt=lambda x, y, t: 2 * lam * x - a * y,
        pp=lambda x, y, t: y + 0 * x,
        f=lambda x, y, t: (-(4 * mu + 2 * lam) + 0 * x, a + 0 * y),
        traction=lambda x, y, t, nx, ny: ((4 * mu * x + 2 * lam * x - a * y) * nx,
                                          (2 * lam * x - a * y) * ny),
    )


def test_steady_solution_is_fixed_point():
    p = ModelParams(mu=2.0, lam_inv=0.5, alpha=0.7, s0=0.3, kappa=1.5, dt=0.05)
    prob = steady_problem(p)
    ops = assemble_operators(unit_square_mesh(4), "taylor-hood", p)
    sys_ = build_static_system(ops, u_bc=prob.u, pp_bc=prob.pp, t=0.0)
    exact = [interpolate(s, fn, 0.0) for s, fn in zip(ops.spaces, (prob.u, prob.pt, prob.pp))]
    state = BiotState(0.0, *exact)
    lin = DirectSolver.for_system(sys_)
    for n in range(1, 4):
        loads = momentum_and_pressure_loads(ops, prob.f, prob.traction, n * p.dt, g=None)
        state, _ = step(sys_, lin, state, n * p.dt, loads)
    for a, b in zip(state.fields(), exact):
        np.testing.assert_allclose(a, b, atol=1e-10)
    st0 = compatible_initial_data(ops, prob.f, prob.pt, prob.pp, u_bc=prob.u, traction=prob.traction)
    for a, b in zip(st0.fields(), exact):
        np.testing.assert_allclose(a, b, atol=1e-10)


def test_minres_and_direct_stepping_agree():
    prob = manufactured_problem()
    a = run_manufactured(4, "taylor-hood", prob, final_time=0.25, dt=1 / 16, solver="direct")
    b = run_manufactured(4, "taylor-hood", prob, final_time=0.25, dt=1 / 16, solver="minres", rtol=1e-12)
    for x, y in zip(a.state.fields(), b.state.fields()):
        np.testing.assert_allclose(x, y, rtol=1e-8, atol=1e-8 * np.abs(x).max())
    assert all(i > 0 for i in b.solver_iterations)


def test_run_rejects_fractional_steps():
    with pytest.raises(ValueError):
        run_manufactured(4, "taylor-hood", final_time=0.1, dt=0.3)


@pytest.mark.parametrize("method", METHODS)
def test_errors_decrease_under_refinement(method):
    prob = manufactured_problem()
    r4 = run_manufactured(4, method, prob).errors
    r8 = run_manufactured(8, method, prob).errors
    for k in ("pt_Qt", "pp_L2", "u_V", "pp_H1k"):
        assert r8[k] < r4[k], k


def test_taylor_hood_n8_table_value():
    # reference Taylor-Hood errors at N = 8 (weighted norms)
    e = run_manufactured(8, "taylor-hood").errors
    assert e["u_V"] == pytest.approx(5.725e-2, rel=1e-3)
    assert e["pp_L2"] == pytest.approx(3.526e-3, rel=1e-3)
    assert e["pt_Qt"] == pytest.approx(4.342e-2, rel=1e-3)
    assert e["pp_H1k"] == pytest.approx(1.126e-1, rel=1e-3)


# ---------------------------------------------------------------------------
# energy


def test_energy_zero_state():
    ops = assemble_operators(unit_square_mesh(2), "brezzi-pitkaranta", ModelParams())
    assert ops.energy(*(np.zeros(s.num_dofs) for s in ops.spaces)) == 0.0


@pytest.mark.parametrize("method", METHODS)
def test_energy_dissipation(method):
    rep = energy_check(unit_square_mesh(4), method, ModelParams(dt=1 / 16, lam_inv=0.5, alpha=0.9), steps=100)
    assert len(rep.energies) == 101
    assert rep.max_increase <= 1e-12 and rep.passed
    assert rep.ratio < 1


@pytest.mark.parametrize("method", METHODS)
def test_energy_nearly_conserved_for_tiny_kappa(method):
    rep = energy_check(unit_square_mesh(4), method, ModelParams(kappa=1e-12, dt=1 / 16), steps=100)
    assert 1 - 1e-6 <= rep.ratio <= 1


def test_energy_zero_steps():
    rep = energy_check(unit_square_mesh(2), "taylor-hood", ModelParams(), steps=0)
    assert rep.energies == [] and rep.passed


# ---------------------------------------------------------------------------
# inf-sup


def test_infsup_operator_equal_to_norm():
    rng = np.random.default_rng(0)
    M = rng.standard_normal((30, 30))
    P = sp.csr_matrix(M @ M.T + 30 * np.eye(30))
    for method in ("iterative", "dense"):
        assert min_generalized_singular_value(P, P, method) == pytest.approx(1.0, abs=1e-10)


def test_infsup_matches_dense_oracle():
    p = ModelParams()
    m = unit_square_mesh(4)
    for method in METHODS:
        it = infsup_estimate(m, method, p)
        dense = infsup_estimate(m, method, p, method="dense")
        assert abs(it - dense) <= 1e-6
        assert 0.5 < it <= 1.0


def test_infsup_stable_under_refinement():
    p = ModelParams()
    b = [infsup_estimate(unit_square_mesh(N), "taylor-hood", p) for N in (4, 8)]
    assert max(b) / min(b) < 1.1


def test_infsup_parameter_extremes():
    m = unit_square_mesh(4)
    vals = [infsup_estimate(m, "taylor-hood", ModelParams.from_lambda(mu, r * mu, kappa=k))
            for mu in (1.0, 1e6) for r in (1.0, 1e6) for k in (1.0, 1e-9)]
    assert max(vals) / min(vals) <= 4


def test_singular_pore_block_rejected():
    p = ModelParams(s0=0.0, lam_inv=0.0)
    bnd = {"dirichlet_u": "left|right", "dirichlet_p": "none"}
    with pytest.raises(SingularBlockError):
        infsup_estimate(unit_square_mesh(2), "taylor-hood", p, bnd)
    with pytest.raises(SingularBlockError):
        build_preconditioner(build_static_system(unit_square_mesh(2), "taylor-hood", p, bnd))


# ---------------------------------------------------------------------------
# preconditioned MinRes on the static system


@pytest.mark.parametrize("method", METHODS)
def test_preconditioned_minres_scale_invariance(method):
    sys_ = build_static_system(unit_square_mesh(8), method, ModelParams())
    A = sys_.matrix()
    P = build_preconditioner(sys_)
    b = np.random.default_rng(1).uniform(-1, 1, A.shape[0])
    _, r1 = minres(A, b, P, rtol=1e-6)
    _, r2 = minres(1e3 * A, 1e3 * b, P, rtol=1e-6)
    assert r1.converged and abs(r1.iterations - r2.iterations) <= 2


def test_taylor_hood_uses_jacobi_for_total_pressure():
    sys_ = build_static_system(unit_square_mesh(4), "taylor-hood", ModelParams())
    P = build_preconditioner(sys_)
    assert type(P.solvers[1]).__name__ == "Jacobi"
    # mixed method: the total-pressure norm block is the (2 mu)^-1 mass only
    Mt = sys_.ops.Mt[sys_.free[1]][:, sys_.free[1]] / 2.0
    assert abs(sys_.norm_blocks()[1] - Mt).max() == 0


def test_stabilized_norm_includes_penalty():
    sys_ = build_static_system(unit_square_mesh(4), "p1-p0", ModelParams())
    S = sys_.ops.S
    assert abs(sys_.norm_blocks()[1] - (sys_.ops.Mt / 2.0 + S)).max() < 1e-15
