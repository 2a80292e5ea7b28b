import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from hypothesis import given, settings
from hypothesis import strategies as st

from biotfem.solvers import (
    BlockPreconditioner,
    Jacobi,
    NotPositiveDefiniteError,
    Scaled,
    SingularBlockError,
    SolverBreakdown,
    SparseLU,
    bandwidth,
    build_block_preconditioner,
    cholesky_factorize,
    cholesky_solve,
    minres,
    nested_dissection,
    rcm_ordering,
)


def laplacian_2d(n):
    T = sp.diags([-1, 2, -1], [-1, 0, 1], shape=(n, n))
    I = sp.identity(n)
    return (sp.kron(I, T) + sp.kron(T, I)).tocsr()


def random_spd(rng, n, density=0.1):
    M = sp.random(n, n, density=density, random_state=rng, format="csr")
    M = M + M.T
    d = np.asarray(abs(M).sum(axis=1)).ravel() + rng.uniform(0.1, 1.0, n)
    return (M + sp.diags(d)).tocsr()


# ---------------------------------------------------------------------------
# orderings


def test_rcm_identity_pattern():
    np.testing.assert_array_equal(rcm_ordering(sp.identity(7, format="csr")), np.arange(7))


def test_rcm_recovers_path():
    rng = np.random.default_rng(0)
    n = 40
    p = rng.permutation(n)
    P = sp.diags([1, 2, 1], [-1, 0, 1], shape=(n, n)).tocsr()
    A = P[p][:, p]
    assert bandwidth(A) > 1
    q = rcm_ordering(A)
    assert sorted(q) == list(range(n))
    assert bandwidth(A[q][:, q]) == 1


def test_rcm_laplacian_not_worse():
    A = laplacian_2d(8)
    q = rcm_ordering(A)
    assert bandwidth(A[q][:, q]) <= bandwidth(A)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_rcm_is_permutation_and_banded(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 60))
    k = int(rng.integers(1, 4))
    A = sp.diags([np.ones(n - abs(o)) for o in range(-k, k + 1)], list(range(-k, k + 1))).tocsr()
    q = rcm_ordering(A)
    np.testing.assert_array_equal(np.sort(q), np.arange(n))
    assert bandwidth(A[q][:, q]) <= bandwidth(A)


def test_nested_dissection_permutation():
    n = 20
    A = laplacian_2d(n)
    xs = np.arange(n)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    coords = np.column_stack([Y.ravel(), X.ravel()]).astype(float)
    p = nested_dissection(A, coords, leaf=16)
    np.testing.assert_array_equal(np.sort(p), np.arange(n * n))


# ---------------------------------------------------------------------------
# Cholesky


def test_cholesky_identity_and_diag():
    b = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(cholesky_solve(cholesky_factorize(sp.identity(3)), b), b)
    F = cholesky_factorize(sp.diags([1.0, 2.0, 3.0]))
    np.testing.assert_allclose(F.solve(np.ones(3)), [1.0, 0.5, 1 / 3], rtol=1e-15)


def test_cholesky_dirichlet_laplacian():
    A = laplacian_2d(7)  # interior nodes of the N=8 grid
    x = cholesky_factorize(A).solve(A @ np.ones(49))
    np.testing.assert_allclose(x, 1.0, atol=1e-10)


def test_cholesky_fifty_random_spd():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 201))
        A = random_spd(rng, n)
        b = rng.standard_normal(n)
        x = cholesky_factorize(A).solve(b)
        worst = max(worst, np.linalg.norm(A @ x - b) / np.linalg.norm(b))
        # dense oracle
        np.testing.assert_allclose(x, sla.cho_solve(sla.cho_factor(A.toarray()), b), rtol=1e-8, atol=1e-10)
    assert worst <= 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 120))
def test_cholesky_factor_reconstructs(seed, n):
    rng = np.random.default_rng(seed)
    A = random_spd(rng, n, density=0.15)
    F = cholesky_factorize(A)
    L = F.lower().toarray()
    PAPT = A.toarray()[np.ix_(F.perm, F.perm)]
    assert np.abs(L @ L.T - PAPT).max() <= 1e-12 * np.abs(PAPT).max()


def test_cholesky_rejects_indefinite():
    with pytest.raises(NotPositiveDefiniteError):
        cholesky_factorize(sp.diags([1.0, -1.0]))
    with pytest.raises(NotPositiveDefiniteError):
        cholesky_factorize(sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 1.0]])))


def test_sparse_lu_quasidefinite():
    rng = np.random.default_rng(5)
    n, m = 60, 25
    A = random_spd(rng, n)
    C = random_spd(rng, m)
    B = sp.random(m, n, density=0.2, random_state=rng)
    K = sp.bmat([[A, B.T], [B, -C]], format="csr")
    coords = rng.uniform(size=(n + m, 2))
    lu = SparseLU(K, coords)
    b = rng.standard_normal(n + m)
    np.testing.assert_allclose(lu.solve(b), spla.spsolve(K.tocsc(), b), rtol=1e-9, atol=1e-11)
    assert lu.fill > 0


# ---------------------------------------------------------------------------
# MinRes


def test_minres_identity_preconditioned():
    A = sp.diags([1.0, 4.0, 9.0, 2.0])
    P = Jacobi.from_matrix(A)
    _, rep = minres(A, np.ones(4), P, rtol=1e-12)
    assert rep.iterations == 1 and rep.converged


def test_minres_two_eigenvalues():
    _, rep = minres(sp.diags([1.0, -1.0]), np.array([1.0, 1.0]), rtol=1e-12)
    assert rep.converged and rep.iterations <= 2


def test_minres_three_eigenvalues():
    x, rep = minres(sp.diags([1.0, 2.0, 3.0]), np.ones(3), rtol=1e-12)
    assert rep.converged and rep.iterations <= 3
    np.testing.assert_allclose(x, [1, 0.5, 1 / 3], rtol=1e-12)


def symmetric_indefinite(rng, n):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    ev = rng.uniform(0.5, 3.0, n) * rng.choice([-1, 1], n)
    return Q @ np.diag(ev) @ Q.T


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_minres_against_scipy(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 40))
    A = symmetric_indefinite(rng, n)
    d = rng.uniform(0.5, 2.0, n)
    M = np.diag(1 / d)  # SPD preconditioner
    b = rng.standard_normal(n)
    x, rep = minres(A, b, lambda r: r / d, rtol=1e-10, maxit=10 * n)
    assert rep.converged
    # the preconditioned residual norms never increase
    assert np.all(np.diff(rep.residuals) <= 1e-14)
    assert rep.residuals[-1] <= 1e-10 and len(rep.residuals) == rep.iterations + 1
    xs, info = spla.minres(A, b, M=M, rtol=1e-12, maxiter=20 * n)
    np.testing.assert_allclose(x, np.linalg.solve(A, b), rtol=1e-6, atol=1e-7)
    np.testing.assert_allclose(x, xs, rtol=1e-6, atol=1e-7)


def test_minres_maxit_report():
    rng = np.random.default_rng(9)
    A = symmetric_indefinite(rng, 50)
    _, rep = minres(A, rng.standard_normal(50), rtol=1e-14, maxit=3)
    assert not rep.converged and rep.iterations == 3 and rep.final_residual > 1e-14


def test_minres_nan_breakdown():
    A = sp.diags([1.0, np.nan, 2.0])
    with pytest.raises(SolverBreakdown):
        minres(A, np.ones(3), rtol=1e-10)


def test_minres_zero_rhs():
    x, rep = minres(sp.identity(3), np.zeros(3))
    assert rep.converged and rep.iterations == 0 and not x.any()


def test_minres_scale_invariance():
    rng = np.random.default_rng(11)
    A = symmetric_indefinite(rng, 30)
    b = rng.standard_normal(30)
    _, r1 = minres(A, b, rtol=1e-8)
    _, r2 = minres(1e3 * A, 1e3 * b, rtol=1e-8)
    assert abs(r1.iterations - r2.iterations) <= 2


# ---------------------------------------------------------------------------
# block preconditioner


def test_block_preconditioner_exact_is_identity():
    rng = np.random.default_rng(1)
    blocks = [random_spd(rng, n) for n in (12, 5, 7)]
    P = build_block_preconditioner(None, blocks)
    D = sp.block_diag(blocks).toarray()
    PD = np.column_stack([P(col) for col in D.T])
    np.testing.assert_allclose(np.linalg.eigvals(PD).real, 1.0, atol=1e-10)


def test_block_preconditioner_spd():
    rng = np.random.default_rng(2)
    blocks = [random_spd(rng, n) for n in (12, 5, 7)]
    P = build_block_preconditioner(None, blocks, inner=("cholesky", "jacobi", "cholesky"))
    for _ in range(100):
        v = rng.standard_normal(24)
        assert v @ P(v) > 0
    u, w = rng.standard_normal(24), rng.standard_normal(24)
    assert abs(u @ P(w) - w @ P(u)) < 1e-12 * (1 + abs(u @ P(w)))


def test_block_preconditioner_rejects_singular_pp():
    # pure Neumann Laplacian: rows sum to zero
    T = sp.diags([-1, 2, -1], [-1, 0, 1], shape=(4, 4)).tolil()
    T[0, 0] = T[3, 3] = 1
    with pytest.raises(SingularBlockError):
        build_block_preconditioner(None, [sp.identity(3), sp.identity(2), T.tocsr()])


def test_jacobi_and_scaled():
    A = sp.diags([2.0, 4.0])
    J = Jacobi.from_matrix(A)
    np.testing.assert_array_equal(J.solve(np.array([2.0, 2.0])), [1.0, 0.5])
    np.testing.assert_array_equal(Scaled(J, 3.0).solve(np.array([2.0, 2.0])), [3.0, 1.5])
    with pytest.raises(NotPositiveDefiniteError):
        Jacobi.from_matrix(sp.diags([1.0, 0.0]))
    P = BlockPreconditioner([J, Scaled(J, 2.0)], [2, 2])
    np.testing.assert_array_equal(P(np.array([2.0, 4.0, 2.0, 4.0])), [1.0, 1.0, 2.0, 2.0])
