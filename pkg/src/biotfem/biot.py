"""Three-field Biot model: static step systems, time stepping and diagnostics.

Unknowns are the displacement ``u``, the total pressure
``p_t = lambda div u - alpha p_p`` and the pore pressure ``p_p``.  Every
backward-Euler step solves the symmetric indefinite system::

    [ A    B^T          0              ] [u  ]   [F_u ]
    [ B   -S - M_l     -M_x            ] [p_t] = [F_t ]
    [ 0   -M_x^T       -M_p - K_p      ] [p_p]   [F_p ]

with ``A`` the elasticity matrix, ``B`` the divergence coupling, ``S`` the
pressure stabilization (zero for Taylor-Hood), ``M_l = lambda^-1`` mass,
``M_x = alpha lambda^-1`` mass between the two pressure spaces,
``M_p = (s0 + alpha^2 lambda^-1)`` mass and ``K_p = kappa dt`` stiffness.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.typing import NDArray

from . import fem
from .fem import DirichletSet, DofMap, build_dofmap, dirichlet_set, interpolate, quadrature_rule, tabulate
from .forms import (
    BlockSystem,
    ModelParams,
    LoadAssembler,
    StabLoad,
    apply_dirichlet,
    assemble_div_coupling,
    assemble_elasticity,
    assemble_laplacian,
    assemble_stab_gradgrad,
    assemble_stab_jump,
    assemble_weighted_mass,
    stab_load,
)
from .mesh import BoundaryTags, EdgeTopology, Mesh, build_edges, tag_boundary, unit_square_mesh
from .solvers import (
    BlockPreconditioner,
    SolveReport,
    SparseLU,
    check_nonsingular,
    build_block_preconditioner,
    minres,
)

DEFAULT_BOUNDARY = {"dirichlet_u": "left|right", "dirichlet_p": "all"}

# The pore-pressure equation is assembled with the load -(g, q); recorded in reports.
PORE_LOAD_SIGN = "-(g,q)"


@dataclass(frozen=True)
class Discretization:
    name: str
    u_kind: fem.ElementKind
    pt_kind: fem.ElementKind
    stabilization: str  # "none", "gradgrad" or "jump"
    label: str

    @property
    def stabilized(self) -> bool:
        return self.stabilization != "none"

    @property
    def default_inner(self) -> tuple[str, str, str]:
        # mixed method: point Jacobi on the total-pressure mass block
        return ("cholesky", "cholesky", "cholesky") if self.stabilized else ("cholesky", "jacobi", "cholesky")


TAYLOR_HOOD = Discretization("taylor-hood", fem.P2_VEC, fem.P1, "none", "Taylor-Hood P2-P1-P1")
BREZZI_PITKARANTA = Discretization(
    "brezzi-pitkaranta", fem.P1_VEC, fem.P1, "gradgrad", "Brezzi-Pitkaranta P1-P1-P1"
)
P1P0_STAB = Discretization("p1-p0", fem.P1_VEC, fem.P0, "jump", "P1-P0 jump-stabilized P1-P0-P1")

DISCRETIZATIONS = {d.name: d for d in (TAYLOR_HOOD, BREZZI_PITKARANTA, P1P0_STAB)}
_ALIASES = {"th": "taylor-hood", "bp": "brezzi-pitkaranta", "p1p0": "p1-p0", "kechkar-silvester": "p1-p0"}


def get_discretization(name: str | Discretization) -> Discretization:
    if isinstance(name, Discretization):
        return name
    key = name.strip().lower().replace("_", "-")
    key = _ALIASES.get(key, key)
    try:
        return DISCRETIZATIONS[key]
    except KeyError:
        raise ValueError(f"unknown method {name!r}; choose from {sorted(DISCRETIZATIONS)}") from None


@dataclass
class BiotOperators:
    """Unconstrained matrices of one discretization on one mesh.

    Coefficient-free pieces are kept separately so that the same assembly can
    serve the static system, the norm (preconditioner) blocks and the energy.
    """

    mesh: Mesh
    topo: EdgeTopology
    tags: BoundaryTags
    disc: Discretization
    params: ModelParams
    spaces: tuple[DofMap, DofMap, DofMap]
    A: sp.csr_matrix  # (2 mu eps, eps)
    B: sp.csr_matrix  # (q_t, div v)
    S: sp.csr_matrix | None  # stabilization s_h
    Mt: sp.csr_matrix  # unit mass on Q_t
    Mx: sp.csr_matrix  # unit mass, rows Q_t, columns Q_p
    Mp: sp.csr_matrix  # unit mass on Q_p
    K: sp.csr_matrix  # unit stiffness on Q_p

    @cached_property
    def loads(self) -> LoadAssembler:
        return LoadAssembler(self.mesh, self.topo, self.spaces, self.tags, self.params)

    @cached_property
    def stab_load(self) -> StabLoad:
        return stab_load(self.mesh, self.spaces[1], self.params)

    def block_system(self, rhs: Sequence[NDArray] | None = None) -> BlockSystem:
        p = self.params
        tt = -p.lam_inv * self.Mt
        if self.S is not None:
            tt = tt - self.S
        tp = -(p.alpha * p.lam_inv) * self.Mx
        pp = -p.storage * self.Mp - p.kappa_dt * self.K
        blocks = [
            [self.A, self.B.T.tocsr(), None],
            [self.B, tt.tocsr(), tp.tocsr()],
            [None, tp.T.tocsr(), pp.tocsr()],
        ]
        if rhs is None:
            rhs = [np.zeros(s.num_dofs) for s in self.spaces]
        return BlockSystem(blocks=blocks, rhs=[np.asarray(r, dtype=float) for r in rhs])

    def norm_blocks(self) -> list[sp.csr_matrix]:
        """Riesz maps of the parameter-dependent norms (unconstrained)."""
        p = self.params
        At = self.Mt / (2.0 * p.mu)
        if self.S is not None:
            At = At + self.S
        App = p.storage * self.Mp + p.kappa_dt * self.K
        return [self.A.tocsr(), sp.csr_matrix(At), sp.csr_matrix(App)]

    def energy(self, u: NDArray, pt: NDArray, pp: NDArray) -> float:
        """``|u|_V^2 + s_h(p_t, p_t) + |p_t + alpha p_p|^2_{1/lambda} + |p_p|^2_{s0}``."""
        p = self.params
        e = u @ (self.A @ u)
        if self.S is not None:
            e += pt @ (self.S @ pt)
        if p.lam_inv:
            e += p.lam_inv * (
                pt @ (self.Mt @ pt) + 2.0 * p.alpha * (pt @ (self.Mx @ pp)) + p.alpha**2 * (pp @ (self.Mp @ pp))
            )
        e += p.s0 * (pp @ (self.Mp @ pp))
        return float(e)


def assemble_operators(
    mesh: Mesh,
    disc: Discretization | str,
    params: ModelParams,
    boundary: Mapping = DEFAULT_BOUNDARY,
) -> BiotOperators:
    disc = get_discretization(disc)
    topo = build_edges(mesh)
    tags = tag_boundary(mesh, topo, boundary)
    du = build_dofmap(mesh, topo, disc.u_kind)
    dt = build_dofmap(mesh, topo, disc.pt_kind)
    dp = build_dofmap(mesh, topo, fem.P1)
    if disc.stabilization == "gradgrad":
        S = assemble_stab_gradgrad(mesh, dt, params)
    elif disc.stabilization == "jump":
        S = assemble_stab_jump(mesh, topo, dt, params)
    else:
        S = None
    return BiotOperators(
        mesh=mesh,
        topo=topo,
        tags=tags,
        disc=disc,
        params=params,
        spaces=(du, dt, dp),
        A=assemble_elasticity(mesh, du, params),
        B=assemble_div_coupling(mesh, du, dt),
        S=S,
        Mt=assemble_weighted_mass(mesh, dt, dt, 1.0),
        Mx=assemble_weighted_mass(mesh, dt, dp, 1.0),
        Mp=assemble_weighted_mass(mesh, dp, dp, 1.0),
        K=assemble_laplacian(mesh, dp),
    )


@dataclass
class StaticSystem(BlockSystem):
    """Dirichlet-reduced static step system with its operators attached."""

    ops: BiotOperators | None = None

    def norm_blocks(self) -> list[sp.csr_matrix]:
        return [
            sp.csr_matrix(N[self.free[i]][:, self.free[i]]) for i, N in enumerate(self.ops.norm_blocks())
        ]

    def free_coords(self) -> NDArray:
        """Node coordinates of the free dofs in system order."""
        return np.vstack([self.ops.spaces[i].coords[self.free[i]] for i in range(3)])

    def constraints_at(self, t: float) -> list[DirichletSet]:
        return [c.at(t) for c in self.constraints]


def boundary_sets(
    ops: BiotOperators, u_bc: Callable | None = None, pp_bc: Callable | None = None, t: float | None = None
) -> list[DirichletSet]:
    du, _, dp = ops.spaces
    return [
        dirichlet_set(du, ops.tags, "dirichlet_u", u_bc, t),
        DirichletSet.empty(),
        dirichlet_set(dp, ops.tags, "dirichlet_p", pp_bc, t),
    ]


def build_static_system(
    mesh: Mesh | BiotOperators,
    disc: Discretization | str | None = None,
    params: ModelParams | None = None,
    boundary: Mapping = DEFAULT_BOUNDARY,
    u_bc: Callable | None = None,
    pp_bc: Callable | None = None,
    t: float | None = None,
) -> StaticSystem:
    """Assemble and reduce the static system for homogeneous or given boundary data."""
    ops = mesh if isinstance(mesh, BiotOperators) else assemble_operators(mesh, disc, params, boundary)
    reduced = apply_dirichlet(ops.block_system(), boundary_sets(ops, u_bc, pp_bc, t))
    return StaticSystem(**vars(reduced), ops=ops)


def build_preconditioner(system: StaticSystem, inner: Sequence[str] | None = None) -> BlockPreconditioner:
    inner = tuple(inner) if inner is not None else system.ops.disc.default_inner
    return build_block_preconditioner(system.ops.params, system.norm_blocks(), inner)


# ---------------------------------------------------------------------------
# linear solvers used by the time loop


class DirectSolver:
    """Sparse LU of the reduced static matrix, factored once."""

    def __init__(self, matrix: sp.spmatrix, coords: NDArray | None = None):
        self.lu = SparseLU(matrix, coords)

    @classmethod
    def for_system(cls, system: StaticSystem) -> "DirectSolver":
        return cls(system.matrix(), system.free_coords())

    def solve(self, b: NDArray, x0: NDArray | None = None) -> tuple[NDArray, SolveReport]:
        t0 = time.perf_counter()
        x = self.lu.solve(b)
        return x, SolveReport(0, [], True, time.perf_counter() - t0, norm="direct")


class MinresSolver:
    def __init__(self, matrix: sp.spmatrix, precond: BlockPreconditioner, rtol: float = 1e-10, maxit: int = 500):
        self.matrix = sp.csr_matrix(matrix)
        self.precond = precond
        self.rtol = rtol
        self.maxit = maxit

    def solve(self, b: NDArray, x0: NDArray | None = None) -> tuple[NDArray, SolveReport]:
        return minres(self.matrix, b, self.precond, rtol=self.rtol, maxit=self.maxit, x0=x0)


class SolverFailure(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# manufactured solution


@dataclass(frozen=True)
class ManufacturedProblem:
    """Closed-form fields and the data they induce.

    All callables take ``(x, y, t)`` arrays; vector fields return pairs and
    gradients ``((d/dx, d/dy) of component 0, (d/dx, d/dy) of component 1)``.
    """

    params: ModelParams
    u: Callable
    grad_u: Callable
    div_u: Callable
    pp: Callable
    grad_pp: Callable
    pt: Callable
    f: Callable
    g: Callable
    traction: Callable
    boundary: Mapping = field(default_factory=lambda: dict(DEFAULT_BOUNDARY))


def manufactured_problem(params: ModelParams | None = None) -> ManufacturedProblem:
    """u = (sin(pi x) sin(1 + t), sin(y) sin(t)), p_p = x^2 y^2 cos(t)."""
    if params is None:
        params = ModelParams.from_lambda(10.0, 15.0, alpha=1.0, s0=1.0, kappa=1.0)
    if params.lam_inv == 0:
        raise ValueError("the manufactured solution needs a finite lambda")
    mu, lam, alpha, s0, kappa = params.mu, params.lam, params.alpha, params.s0, params.kappa
    pi = np.pi

    def u(x, y, t):
        return np.sin(pi * x) * np.sin(1 + t), np.sin(y) * np.sin(t)

    def grad_u(x, y, t):
        z = np.zeros(np.broadcast(x, y).shape)
        return (pi * np.cos(pi * x) * np.sin(1 + t) + z, z), (z, np.cos(y) * np.sin(t) + z)

    def div_u(x, y, t):
        return pi * np.cos(pi * x) * np.sin(1 + t) + np.cos(y) * np.sin(t)

    def pp(x, y, t):
        return x**2 * y**2 * np.cos(t)

    def grad_pp(x, y, t):
        return 2 * x * y**2 * np.cos(t), 2 * x**2 * y * np.cos(t)

    def pt(x, y, t):
        return lam * div_u(x, y, t) - alpha * pp(x, y, t)

    def f(x, y, t):
        # -div(2 mu eps(u)) - grad p_t
        fx = (2 * mu + lam) * pi**2 * np.sin(pi * x) * np.sin(1 + t) + alpha * 2 * x * y**2 * np.cos(t)
        fy = (2 * mu + lam) * np.sin(y) * np.sin(t) + alpha * 2 * x**2 * y * np.cos(t)
        return fx, fy

    def g(x, y, t):
        # s0 dp/dt + alpha div du/dt - div(kappa grad p)
        dpdt = -(x**2) * y**2 * np.sin(t)
        ddiv = pi * np.cos(pi * x) * np.cos(1 + t) + np.cos(y) * np.cos(t)
        lap = 2 * (x**2 + y**2) * np.cos(t)
        return s0 * dpdt + alpha * ddiv - kappa * lap

    def traction(x, y, t, nx, ny):
        # sigma = 2 mu eps(u) + p_t I; eps(u) is diagonal for this field
        e11 = pi * np.cos(pi * x) * np.sin(1 + t)
        e22 = np.cos(y) * np.sin(t)
        p = pt(x, y, t)
        return (2 * mu * e11 + p) * nx, (2 * mu * e22 + p) * ny

    return ManufacturedProblem(params, u, grad_u, div_u, pp, grad_pp, pt, f, g, traction)


# ---------------------------------------------------------------------------
# states, initial data, time stepping


@dataclass
class BiotState:
    t: float
    u: NDArray
    pt: NDArray
    pp: NDArray

    def fields(self) -> tuple[NDArray, NDArray, NDArray]:
        return self.u, self.pt, self.pp


def _as_field(ops: BiotOperators, i: int, value, t: float) -> NDArray:
    space = ops.spaces[i]
    if value is None:
        return np.zeros(space.num_dofs)
    if callable(value):
        return interpolate(space, value, t)
    arr = np.asarray(value, dtype=float)
    if arr.shape != (space.num_dofs,):
        raise ValueError(f"field {i} has {arr.shape} entries, expected {space.num_dofs}")
    return arr


def momentum_and_pressure_loads(
    ops: BiotOperators, f: Callable | None, traction: Callable | None, t: float,
    g: Callable | None = None, flux: Callable | None = None,
) -> list[NDArray]:
    Fu, Ft, Fp = ops.loads(f, g, traction, t, flux)
    w = ops.params.stab_rhs
    if ops.disc.stabilization == "gradgrad" and f is not None and w != 0:
        Ft = Ft + w * ops.stab_load(f, t)
    return [Fu, Ft, Fp]


def compatible_initial_data(
    ops: BiotOperators,
    f0: Callable | None = None,
    pt0=None,
    pp0=None,
    u_bc: Callable | None = None,
    traction: Callable | None = None,
    t0: float = 0.0,
) -> BiotState:
    """Initial state satisfying the two algebraic equations of the scheme.

    Solves the momentum and total-pressure equations together with
    ``-(alpha^2/lambda p_t, q) - (kappa grad p_p, grad q) =
    -(alpha^2/lambda p_t(0), q) - (kappa grad p_p(0), grad q)``, where the
    given ``pt0``/``pp0`` (callables or dof vectors) are represented by their
    nodal interpolants.  ``pp0`` also supplies the pressure boundary values.
    """
    p = ops.params
    pt0_h = _as_field(ops, 1, pt0, t0)
    pp0_h = _as_field(ops, 2, pp0, t0)
    a2 = p.alpha**2 * p.lam_inv
    sys_full = ops.block_system()
    tt = sys_full.blocks[1][1]
    blocks = [
        [ops.A, ops.B.T.tocsr(), None],
        [ops.B, tt, sys_full.blocks[1][2]],
        [None, (-a2 * ops.Mx.T).tocsr(), (-p.kappa * ops.K).tocsr()],
    ]
    Fu, Ft, _ = momentum_and_pressure_loads(ops, f0, traction, t0)
    Fp = -a2 * (ops.Mx.T @ pt0_h) - p.kappa * (ops.K @ pp0_h)
    full = BlockSystem(blocks=blocks, rhs=[Fu, Ft, Fp])
    du, _, dp = ops.spaces
    pp_set = dirichlet_set(dp, ops.tags, "dirichlet_p")
    pp_set = DirichletSet(pp_set.dofs, pp0_h[pp_set.dofs].copy(), t0)
    cons = [dirichlet_set(du, ops.tags, "dirichlet_u", u_bc, t0 if u_bc else None), DirichletSet.empty(), pp_set]
    red = apply_dirichlet(full, cons)
    if red.vector().size == 0:
        x = np.zeros(0)
    else:
        try:
            x = spla.splu(sp.csc_matrix(red.matrix())).solve(red.vector())
        except RuntimeError as exc:
            raise SolverFailure(f"initial-data system could not be solved: {exc}") from exc
    u, pt, pp = red.expand(x)
    return BiotState(t0, u, pt, pp)


def algebraic_residual(ops: BiotOperators, state: BiotState, f: Callable | None,
                       traction: Callable | None = None) -> float:
    """Relative residual of the momentum and total-pressure equations on free dofs."""
    sysm = build_static_system(ops, u_bc=None)
    Fu, Ft, _ = momentum_and_pressure_loads(ops, f, traction, state.t)
    full = ops.block_system()
    r_u = full.blocks[0][0] @ state.u + full.blocks[0][1] @ state.pt - Fu
    r_t = full.blocks[1][0] @ state.u + full.blocks[1][1] @ state.pt + full.blocks[1][2] @ state.pp - Ft
    r = np.concatenate([r_u[sysm.free[0]], r_t[sysm.free[1]]])
    scale = max(np.linalg.norm(np.concatenate([Fu, Ft])), np.linalg.norm(ops.A @ state.u), 1e-300)
    return float(np.linalg.norm(r) / scale)


def history_load(ops: BiotOperators, state: BiotState) -> NDArray:
    """``-(alpha/lambda p_t^n, q) - ((s0 + alpha^2/lambda) p_p^n, q)``."""
    p = ops.params
    return -(p.alpha * p.lam_inv) * (ops.Mx.T @ state.pt) - p.storage * (ops.Mp @ state.pp)


def step(
    system: StaticSystem,
    solver,
    state: BiotState,
    t_next: float,
    loads: Sequence[NDArray],
    constraints: Sequence[DirichletSet] | None = None,
) -> tuple[BiotState, SolveReport]:
    """One backward-Euler step.

    ``loads`` are the right-hand sides at ``t_next`` without history terms
    (see :func:`biotfem.forms.assemble_loads`); ``constraints`` the boundary
    values at ``t_next`` (defaults to re-evaluating the stored ones).
    """
    ops = system.ops
    cons = list(constraints) if constraints is not None else system.constraints_at(t_next)
    rhs = [np.asarray(loads[0], float), np.asarray(loads[1], float), loads[2] + history_load(ops, state)]
    b = system.lift(rhs, cons)
    x0 = np.concatenate([state.u[system.free[0]], state.pt[system.free[1]], state.pp[system.free[2]]])
    x, report = solver.solve(b, x0)
    if not report.converged:
        raise SolverFailure(f"linear solver did not converge at t={t_next:g} ({report.iterations} iterations)")
    u, pt, pp = system.expand(x, cons)
    return BiotState(t_next, u, pt, pp), report


# ---------------------------------------------------------------------------
# errors


@dataclass
class ErrorReport:
    """Errors at the final time, one row per mesh."""

    N: list[int] = field(default_factory=list)
    errors: dict[str, list[float]] = field(default_factory=lambda: {k: [] for k in ALL_ERROR_KEYS})

    def add(self, N: int, errs: Mapping[str, float]) -> None:
        self.N.append(int(N))
        for k in ALL_ERROR_KEYS:
            self.errors[k].append(float(errs[k]))

    def rates(self, key: str) -> list[float | None]:
        """``log(e_prev / e) / log(N / N_prev)``; ``log2(e_N / e_2N)`` when N doubles."""
        e, N = self.errors[key], self.N
        out: list[float | None] = [None]
        for i in range(1, len(e)):
            out.append(math.log(e[i - 1] / e[i]) / math.log(N[i] / N[i - 1]))
        return out


# table columns: weighted p_t error, pore pressure L2, energy norm of u, kappa-weighted H1 of p_p
ERROR_KEYS = ("pt_Qt", "pp_L2", "u_V", "pp_H1k")
ALL_ERROR_KEYS = ERROR_KEYS + ("pt_L2", "u_H1")


def _field_at_quad(ops: BiotOperators, i: int, vec: NDArray, rule):
    """Values and physical gradients of a discrete field at quadrature points."""
    space = ops.spaces[i]
    geom = fem.cell_geometry(ops.mesh)
    vals, ref_grads = tabulate(space.kind, rule.points)
    grads = geom.physical_gradients(ref_grads)  # (nc, nq, nloc, 2)
    n = space.kind.scalar_local_dofs
    out_v, out_g = [], []
    for c in range(space.kind.components):
        coef = vec[space.cell_dofs[:, c * n:(c + 1) * n]]  # (nc, nloc)
        out_v.append(coef @ vals.T)
        out_g.append(np.einsum("ca,cqai->cqi", coef, grads))
    return out_v, out_g, geom


def error_norms(ops: BiotOperators, state: BiotState, problem: ManufacturedProblem, degree: int = 5) -> dict[str, float]:
    """L2 errors of both pressures, H1 error of u and kappa-weighted H1 seminorm of p_p."""
    if degree < 5:
        raise ValueError("error norms need a quadrature of degree >= 5")
    rule = quadrature_rule(degree)
    t = state.t
    uv, ug, geom = _field_at_quad(ops, 0, state.u, rule)
    X = geom.map(rule.points)
    x, y = X[..., 0], X[..., 1]
    w = rule.weights[None, :] * np.abs(geom.detJ)[:, None]
    integ = lambda a: float(np.sum(w * a))

    ue = problem.u(x, y, t)
    ge = problem.grad_u(x, y, t)
    u_l2 = sum(integ((ue[c] - uv[c]) ** 2) for c in range(2))
    du = [[ge[c][d] - ug[c][..., d] for d in range(2)] for c in range(2)]
    u_h1 = sum(integ(du[c][d] ** 2) for c in range(2) for d in range(2))
    eps01 = 0.5 * (du[0][1] + du[1][0])
    u_eps = integ(du[0][0] ** 2 + du[1][1] ** 2 + 2 * eps01**2)

    tv, _, _ = _field_at_quad(ops, 1, state.pt, rule)
    pt_l2 = integ((problem.pt(x, y, t) - tv[0]) ** 2)

    pv, pg, _ = _field_at_quad(ops, 2, state.pp, rule)
    pp_l2 = integ((problem.pp(x, y, t) - pv[0]) ** 2)
    gp = problem.grad_pp(x, y, t)
    pp_h1 = integ(sum((gp[d] - pg[0][..., d]) ** 2 for d in range(2)))

    mu = ops.params.mu
    return {
        "pt_L2": math.sqrt(pt_l2),
        "pp_L2": math.sqrt(pp_l2),
        "u_H1": math.sqrt(u_l2 + u_h1),
        "pp_H1k": math.sqrt(ops.params.kappa * pp_h1),
        "pt_Qt": math.sqrt(pt_l2 / (2 * mu)),
        "u_V": math.sqrt(2 * mu * u_eps),
    }


def l2_norm(ops: BiotOperators, field_index: int, vec: NDArray, fn: Callable | None = None, t: float = 0.0) -> float:
    """L2 norm of a discrete field, or of its difference with ``fn``."""
    rule = quadrature_rule(5)
    vals, _, geom = _field_at_quad(ops, field_index, vec, rule)
    w = rule.weights[None, :] * np.abs(geom.detJ)[:, None]
    if fn is None:
        return math.sqrt(sum(float(np.sum(w * v**2)) for v in vals))
    X = geom.map(rule.points)
    ex = fn(X[..., 0], X[..., 1], t)
    ex = ex if isinstance(ex, tuple) else (ex,)
    return math.sqrt(sum(float(np.sum(w * (e - v) ** 2)) for e, v in zip(ex, vals)))


# ---------------------------------------------------------------------------
# drivers


@dataclass
class TransientResult:
    state: BiotState
    errors: dict[str, float]
    steps: int
    dt: float
    solver_iterations: list[int]
    seconds: float


def run_manufactured(
    N: int,
    disc: Discretization | str,
    problem: ManufacturedProblem | None = None,
    final_time: float = 0.5,
    dt: float | None = None,
    solver: str = "direct",
    rtol: float = 1e-10,
    gamma2: float | None = None,
) -> TransientResult:
    """Backward-Euler run of the manufactured problem with ``dt = h^2`` by default."""
    t_start = time.perf_counter()
    problem = problem or manufactured_problem()
    mesh = unit_square_mesh(N)
    dt = mesh.h**2 if dt is None else dt
    nsteps = int(round(final_time / dt))
    if nsteps < 1 or abs(nsteps * dt - final_time) > 1e-9 * max(1.0, final_time):
        raise ValueError(f"final time {final_time} is not a whole number of steps of size {dt}")
    params = problem.params.with_(dt=dt)
    if gamma2 is not None:
        params = params.with_(gamma2=gamma2)
    ops = assemble_operators(mesh, disc, params, problem.boundary)
    system = build_static_system(ops, u_bc=problem.u, pp_bc=problem.pp, t=0.0)
    if solver == "direct":
        lin = DirectSolver.for_system(system)
    elif solver == "minres":
        lin = MinresSolver(system.matrix(), build_preconditioner(system), rtol=rtol)
    else:
        raise ValueError(f"unknown solver {solver!r}")

    state = compatible_initial_data(
        ops, problem.f, problem.pt, problem.pp, u_bc=problem.u, traction=problem.traction
    )
    iterations = []
    for n in range(1, nsteps + 1):
        t = n * dt
        loads = momentum_and_pressure_loads(ops, problem.f, problem.traction, t, g=problem.g)
        state, rep = step(system, lin, state, t, loads)
        iterations.append(rep.iterations)
    errs = error_norms(ops, state, problem)
    return TransientResult(state, errs, nsteps, dt, iterations, time.perf_counter() - t_start)


@dataclass
class EnergyReport:
    energies: list[float]
    max_increase: float  # max_n (E_{n+1} - E_n) / E_0, E = X^2
    ratio: float  # X_last / X_0

    @property
    def passed(self) -> bool:
        return self.max_increase <= 1e-12


def energy_check(
    mesh: Mesh,
    disc: Discretization | str,
    params: ModelParams,
    steps: int = 100,
    seed: int = 0,
    boundary: Mapping = DEFAULT_BOUNDARY,
) -> EnergyReport:
    """Track the discrete energy over unforced backward-Euler steps.

    The start is a compatible state built from a random pore pressure.
    """
    ops = assemble_operators(mesh, disc, params, boundary)
    if steps <= 0:
        return EnergyReport([], 0.0, 1.0)
    rng = np.random.default_rng(seed)
    dp = ops.spaces[2]
    pp0 = rng.uniform(-1.0, 1.0, dp.num_dofs)
    pp0[dirichlet_set(dp, ops.tags, "dirichlet_p").dofs] = 0.0
    state = compatible_initial_data(ops, None, None, pp0)
    system = build_static_system(ops)
    lin = DirectSolver.for_system(system)
    zero = [np.zeros(s.num_dofs) for s in ops.spaces]
    energies = [ops.energy(*state.fields())]
    for n in range(steps):
        state, _ = step(system, lin, state, state.t + params.dt, zero)
        energies.append(ops.energy(*state.fields()))
    E = np.array(energies)
    inc = np.diff(E) / E[0] if E[0] > 0 else np.zeros(len(E) - 1)
    return EnergyReport(list(E), float(max(inc.max(initial=-np.inf), 0.0) if inc.size else 0.0),
                        float(math.sqrt(E[-1] / E[0])) if E[0] > 0 else 1.0)


class EigenNonConvergence(RuntimeError):
    pass


# largest system for which a failed Lanczos run falls back to dense eigenvalues
DENSE_FALLBACK = 4000


def min_generalized_singular_value(A: sp.spmatrix, P: sp.spmatrix, method: str = "iterative",
                                   tol: float = 1e-10) -> float:
    """Smallest ``|nu|`` with ``A x = nu P x`` for symmetric ``A`` and SPD ``P``.

    For symmetric ``A`` this equals the smallest singular value of
    ``P^{-1/2} A P^{-1/2}``, i.e. the inf-sup constant of ``A`` between the
    norm given by ``P`` and its dual.  ``"iterative"`` runs shift-invert
    Lanczos around zero (inverse iteration accelerated by a Krylov space);
    ``"dense"`` a full generalized eigendecomposition.
    """
    n = A.shape[0]
    # symmetric diagonal scaling leaves the pencil's eigenvalues unchanged
    d = 1.0 / np.sqrt(np.asarray(sp.csr_matrix(P).diagonal(), dtype=float))
    D = sp.diags(d)
    A = sp.csc_matrix(D @ A @ D)
    P = sp.csc_matrix(D @ P @ D)
    if method == "dense" or (method == "iterative" and n < 8):
        ev = scipy.linalg.eigh(A.toarray(), P.toarray(), eigvals_only=True)
        return float(np.abs(ev).min())
    if method != "iterative":
        raise ValueError(f"unknown method {method!r}")
    try:
        vals = spla.eigsh(A, k=min(4, n - 2), M=P, sigma=0.0, which="LM", tol=tol,
                          maxiter=5000, return_eigenvectors=False, v0=np.ones(n))
    except spla.ArpackNoConvergence as exc:
        if n <= DENSE_FALLBACK:
            return min_generalized_singular_value(A, P, "dense")
        raise EigenNonConvergence(str(exc)) from exc
    return float(np.abs(vals).min())


def infsup_estimate(
    mesh: Mesh | StaticSystem,
    disc: Discretization | str | None = None,
    params: ModelParams | None = None,
    boundary: Mapping = DEFAULT_BOUNDARY,
    method: str = "iterative",
    tol: float = 1e-10,
) -> float:
    """Discrete inf-sup constant of the static operator in the norm of the preconditioner.

    The norm matrix is block diagonal with the Riesz maps of the
    parameter-dependent norms (see :meth:`StaticSystem.norm_blocks`).
    """
    system = mesh if isinstance(mesh, StaticSystem) else build_static_system(mesh, disc, params, boundary)
    blocks = system.norm_blocks()
    if system.ops.params.storage == 0:
        check_nonsingular(blocks[2], "p_p")
    P = sp.block_diag(blocks, format="csc")
    return min_generalized_singular_value(system.matrix(), P, method, tol)
