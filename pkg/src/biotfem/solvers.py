"""Sparse kernels: orderings, envelope Cholesky, MinRes and block preconditioners."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numba
import scipy.sparse.linalg as spla
import numpy as np
import scipy.sparse as sp
from numpy.typing import NDArray
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .forms import ModelParams


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a Cholesky pivot is not strictly positive."""


class SingularBlockError(ValueError):
    """Raised when a preconditioner block has a nontrivial kernel."""


class SolverBreakdown(FloatingPointError):
    """Raised when MinRes produces non-finite iterates."""


def bandwidth(A: sp.spmatrix) -> int:
    coo = sp.coo_matrix(A)
    if coo.nnz == 0:
        return 0
    return int(np.abs(coo.row - coo.col).max())


def rcm_ordering(A: sp.spmatrix) -> NDArray:
    """Reverse Cuthill-McKee permutation of a structurally symmetric pattern.

    The natural ordering is kept whenever reordering would not reduce the
    bandwidth (this includes diagonal patterns).
    """
    A = sp.csr_matrix(A)
    n = A.shape[0]
    natural = np.arange(n)
    if n == 0:
        return natural
    perm = np.asarray(reverse_cuthill_mckee(A, symmetric_mode=True), dtype=np.int64)
    if bandwidth(A[perm][:, perm]) < bandwidth(A):
        return perm
    return natural


def nested_dissection(A: sp.spmatrix, coords: NDArray, leaf: int = 64) -> NDArray:
    """Fill-reducing ordering by recursive coordinate bisection.

    Each subset is split at the median of its longest coordinate extent; the
    nodes of the lower half that touch the upper half form the separator,
    which is numbered after both halves.
    """
    A = sp.csr_matrix(A)
    n = A.shape[0]
    if coords.shape[0] != n:
        raise ValueError("need one coordinate per row")
    G = (abs(A) + abs(A.T)).tocsr()
    parts: list[NDArray] = []
    # explicit stack of (indices, separator-to-append) to avoid deep recursion
    stack: list[tuple[NDArray | None, NDArray | None]] = [(np.arange(n), None)]
    while stack:
        idx, sep_after = stack.pop()
        if idx is None:
            parts.append(sep_after)
            continue
        if idx.size <= leaf:
            parts.append(idx)
            continue
        c = coords[idx]
        d = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        upper = c[:, d] > np.median(c[:, d])
        if upper.all() or not upper.any():
            parts.append(idx)
            continue
        sub = G[idx][:, idx]
        sep = ~upper & (sub[:, upper].getnnz(axis=1) > 0)
        lower = ~upper & ~sep
        # popped in reverse: lower half, upper half, then the separator
        stack.append((None, idx[sep]))
        stack.append((idx[upper], None))
        stack.append((idx[lower], None))
    return np.concatenate(parts)


class SparseLU:
    """Direct solver for a fixed sparse matrix (SuperLU).

    With coordinates, the matrix is permuted by :func:`nested_dissection` and
    factored with diagonal pivots, which is stable for the quasi-definite
    step matrices (SPD displacement block, negative definite pressure block).
    If that factorization fails or is inaccurate, threshold pivoting with a
    COLAMD ordering is used instead.
    """

    def __init__(self, A: sp.spmatrix, coords: NDArray | None = None, check_tol: float = 1e-8):
        A = sp.csc_matrix(A)
        self.n = A.shape[0]
        self.perm = None
        self.lu = None
        if coords is not None and self.n > 0:
            perm = nested_dissection(A, coords)
            Ap = sp.csc_matrix(A[perm][:, perm])
            try:
                lu = spla.splu(Ap, permc_spec="NATURAL", diag_pivot_thresh=0.0,
                               options=dict(SymmetricMode=True))
                b = np.random.default_rng(0).uniform(-1.0, 1.0, self.n)
                x = lu.solve(b)
                if np.all(np.isfinite(x)) and np.linalg.norm(Ap @ x - b) <= check_tol * np.linalg.norm(b):
                    self.lu, self.perm = lu, perm
            except RuntimeError:
                pass
        if self.lu is None and self.n > 0:
            self.lu = spla.splu(A)

    @property
    def fill(self) -> int:
        return 0 if self.lu is None else self.lu.L.nnz + self.lu.U.nnz

    def solve(self, b: NDArray) -> NDArray:
        if self.n == 0:
            return np.zeros(0)
        if self.perm is None:
            return self.lu.solve(b)
        x = np.empty(self.n)
        x[self.perm] = self.lu.solve(np.ascontiguousarray(b[self.perm]))
        return x


def _lower_envelope(A: sp.csr_matrix) -> tuple[NDArray, NDArray]:
    """First column of the lower envelope in each row and envelope row pointers."""
    n = A.shape[0]
    coo = A.tocoo()
    low = coo.row >= coo.col
    first = np.arange(n, dtype=np.int64)
    np.minimum.at(first, coo.row[low], coo.col[low].astype(np.int64))
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.arange(n) - first + 1, out=ptr[1:])
    return first, ptr


@numba.njit(cache=True)
def _envelope_factor(first, ptr, L):
    """In-place row-oriented Cholesky on envelope storage; returns failing row or -1."""
    n = first.size
    for i in range(n):
        fi = first[i]
        pi = ptr[i] - fi  # L[i, k] lives at L[pi + k]
        for j in range(fi, i):
            fj = first[j]
            pj = ptr[j] - fj
            k0 = fi if fi > fj else fj
            s = L[pi + j]
            for k in range(k0, j):
                s -= L[pi + k] * L[pj + k]
            L[pi + j] = s / L[pj + j]
        d = L[pi + i]
        for k in range(fi, i):
            d -= L[pi + k] * L[pi + k]
        if not d > 0.0:
            return i
        L[pi + i] = np.sqrt(d)
    return -1


@numba.njit(cache=True)
def _envelope_solve(first, ptr, L, b):
    n = first.size
    x = b.copy()
    for i in range(n):
        fi = first[i]
        pi = ptr[i] - fi
        s = x[i]
        for k in range(fi, i):
            s -= L[pi + k] * x[k]
        x[i] = s / L[pi + i]
    for i in range(n - 1, -1, -1):
        fi = first[i]
        pi = ptr[i] - fi
        xi = x[i] / L[pi + i]
        x[i] = xi
        for k in range(fi, i):
            x[k] -= L[pi + k] * xi
    return x


@numba.njit(cache=True)
def _fill_envelope(indptr, indices, data, first, ptr, L):
    n = first.size
    for i in range(n):
        base = ptr[i] - first[i]
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            if j <= i:
                L[base + j] += data[p]


@dataclass(frozen=True)
class CholeskyFactor:
    """``P A P^T = L L^T`` with ``L`` stored row-wise on the envelope of ``P A P^T``.

    Row ``i`` of ``L`` holds columns ``first[i] .. i`` at ``values[ptr[i]:ptr[i+1]]``.
    """

    perm: NDArray
    first: NDArray
    ptr: NDArray
    values: NDArray
    n: int

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    def solve(self, b: NDArray) -> NDArray:
        return cholesky_solve(self, b)

    def lower(self) -> sp.csr_matrix:
        """The factor ``L`` as a sparse matrix (permuted numbering)."""
        rows = np.repeat(np.arange(self.n), np.diff(self.ptr))
        cols = np.concatenate([np.arange(f, i + 1) for i, f in enumerate(self.first)]) if self.n else rows
        return sp.csr_matrix((self.values, (rows, cols)), shape=(self.n, self.n))


def cholesky_factorize(A: sp.spmatrix, perm: NDArray | None = None) -> CholeskyFactor:
    """Envelope Cholesky factorization after a fill-reducing (RCM) ordering."""
    A = sp.csr_matrix(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("matrix must be square")
    if perm is None:
        perm = rcm_ordering(A)
    perm = np.asarray(perm, dtype=np.int64)
    Ap = A[perm][:, perm].tocsr()
    Ap.sum_duplicates()
    first, ptr = _lower_envelope(Ap)
    L = np.zeros(ptr[-1])
    _fill_envelope(Ap.indptr.astype(np.int64), Ap.indices.astype(np.int64), Ap.data, first, ptr, L)
    bad = _envelope_factor(first, ptr, L)
    if bad >= 0:
        raise NotPositiveDefiniteError(
            f"non-positive pivot at row {int(perm[bad])} (matrix is not positive definite)"
        )
    return CholeskyFactor(perm=perm, first=first, ptr=ptr, values=L, n=n)


def cholesky_solve(F: CholeskyFactor, b: NDArray) -> NDArray:
    b = np.asarray(b, dtype=float)
    y = _envelope_solve(F.first, F.ptr, F.values, np.ascontiguousarray(b[F.perm]))
    x = np.empty_like(y)
    x[F.perm] = y
    return x


@dataclass(frozen=True)
class Jacobi:
    """Diagonal (point Jacobi) approximate inverse."""

    inv_diag: NDArray

    @classmethod
    def from_matrix(cls, A: sp.spmatrix) -> "Jacobi":
        d = np.asarray(sp.csr_matrix(A).diagonal(), dtype=float)
        if np.any(d <= 0):
            raise NotPositiveDefiniteError("Jacobi needs a strictly positive diagonal")
        return cls(1.0 / d)

    def solve(self, b: NDArray) -> NDArray:
        return self.inv_diag * b


@dataclass(frozen=True)
class Scaled:
    """``x -> scale * inner.solve(x)``; reuses a factor of a rescaled matrix."""

    inner: object
    scale: float

    def solve(self, b: NDArray) -> NDArray:
        return self.scale * self.inner.solve(b)


@dataclass
class SolveReport:
    iterations: int
    residuals: list[float]
    converged: bool
    seconds: float
    norm: str = "preconditioned"

    @property
    def final_residual(self) -> float:
        return self.residuals[-1] if self.residuals else 0.0


def _as_apply(op) -> Callable[[NDArray], NDArray]:
    if op is None:
        return lambda r: r.copy()
    if callable(op):
        return op
    if hasattr(op, "solve"):
        return op.solve
    return lambda r: op @ r


def minres(
    A,
    b: NDArray,
    precond=None,
    rtol: float = 1e-6,
    maxit: int = 500,
    x0: NDArray | None = None,
) -> tuple[NDArray, SolveReport]:
    """Preconditioned MinRes for symmetric (indefinite) ``A`` and SPD ``precond``.

    ``A`` is a matrix or a callable; ``precond`` applies an approximate inverse.
    Convergence is tested on the preconditioned residual norm
    ``sqrt(r^T P r)`` relative to its initial value.  The residual history
    includes the initial value.
    """
    t0 = time.perf_counter()
    matvec = _as_apply(A) if callable(A) else (lambda v: A @ v)
    apply_p = _as_apply(precond)
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)

    r1 = b - matvec(x) if x0 is not None else b.copy()
    y = apply_p(r1)
    beta1 = float(r1 @ y)
    if beta1 < 0:
        raise ValueError("preconditioner is not positive definite")
    beta1 = np.sqrt(beta1)
    history = [1.0]
    if beta1 == 0.0:
        return x, SolveReport(0, [0.0], True, time.perf_counter() - t0)

    oldb, beta, dbar, epsln = 0.0, beta1, 0.0, 0.0
    phibar, cs, sn = beta1, -1.0, 0.0
    w = np.zeros_like(b)
    w2 = np.zeros_like(b)
    r2 = r1
    eps = np.finfo(float).eps
    converged = False
    itn = 0
    while itn < maxit:
        itn += 1
        v = y / beta
        y = matvec(v)
        if itn >= 2:
            y = y - (beta / oldb) * r1
        alfa = float(v @ y)
        y = y - (alfa / beta) * r2
        r1, r2 = r2, y
        y = apply_p(r2)
        oldb = beta
        beta2 = float(r2 @ y)
        if beta2 < 0:
            raise ValueError("preconditioner is not positive definite")
        beta = np.sqrt(beta2)

        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = max(np.hypot(gbar, beta), eps)
        cs, sn = gbar / gamma, beta / gamma
        phi = cs * phibar
        phibar = sn * phibar

        w1, w2 = w2, w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x = x + phi * w

        rel = phibar / beta1
        if not np.isfinite(rel) or not np.all(np.isfinite(x[:1])):
            raise SolverBreakdown(f"MinRes produced non-finite values at iteration {itn}")
        history.append(rel)
        if rel <= rtol:
            converged = True
            break
        if beta == 0.0:
            # invariant Krylov subspace: the iterate is exact
            converged = True
            break
    if not np.all(np.isfinite(x)):
        raise SolverBreakdown("MinRes produced non-finite values")
    return x, SolveReport(itn, history, converged, time.perf_counter() - t0)


@dataclass
class BlockPreconditioner:
    """Block-diagonal approximate inverse with one inner solver per field."""

    solvers: list
    sizes: list[int]
    labels: list[str] = field(default_factory=list)

    @property
    def offsets(self) -> NDArray:
        return np.concatenate([[0], np.cumsum(self.sizes)])

    def __call__(self, r: NDArray) -> NDArray:
        return self.solve(r)

    def solve(self, r: NDArray) -> NDArray:
        off = self.offsets
        out = np.empty_like(r, dtype=float)
        for i, s in enumerate(self.solvers):
            out[off[i]:off[i + 1]] = s.solve(r[off[i]:off[i + 1]])
        return out


def check_nonsingular(A: sp.spmatrix, name: str) -> None:
    n = A.shape[0]
    if n == 0:
        return
    ones = np.ones(n)
    scale = abs(A).sum(axis=1).max()
    if scale == 0 or np.linalg.norm(A @ ones) <= 1e-12 * scale * np.sqrt(n):
        raise SingularBlockError(
            f"{name} block is singular (constants in its kernel): "
            "need s0 > 0, a finite lambda, or a non-empty pressure Dirichlet boundary"
        )


def make_inner_solver(A: sp.spmatrix, kind: str = "cholesky"):
    if kind == "cholesky":
        return cholesky_factorize(A)
    if kind == "jacobi":
        return Jacobi.from_matrix(A)
    raise ValueError(f"unknown inner solver {kind!r}")


def build_block_preconditioner(
    params: ModelParams | None,
    blocks: Sequence[sp.spmatrix],
    inner: Sequence[str] = ("cholesky", "cholesky", "cholesky"),
    labels: Sequence[str] = ("u", "p_t", "p_p"),
) -> BlockPreconditioner:
    """Block-diagonal preconditioner from the norm matrices of each field.

    The last block (pore pressure) is checked for a constant kernel before
    factorization.
    """
    if len(blocks) != len(inner):
        raise ValueError("need one inner solver choice per block")
    if params is None or params.storage == 0.0:
        check_nonsingular(blocks[-1], labels[-1])
    solvers = [make_inner_solver(A, kind) for A, kind in zip(blocks, inner)]
    return BlockPreconditioner(solvers, [A.shape[0] for A in blocks], list(labels))
