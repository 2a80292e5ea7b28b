"""Assembly of the bilinear and linear forms of the three-field Biot system.

All matrices are returned as canonical ``scipy.sparse.csr_matrix`` (sorted
column indices, duplicates summed).  Element contributions are computed for
all cells at once and scattered in cell order, so the output does not depend
on anything but the mesh numbering.

Callables describing data take coordinate arrays and a time:
``f(x, y, t) -> (fx, fy)``, ``g(x, y, t) -> array``,
``traction(x, y, t, nx, ny) -> (tx, ty)`` and ``flux(x, y, t, nx, ny)`` for
the outward Darcy flux ``-kappa grad p . n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import scipy.io
import scipy.sparse as sp
from numpy.typing import NDArray

from .fem import (
    CellGeometry,
    DirichletSet,
    DofMap,
    cell_geometry,
    edge_rule,
    quadrature_rule,
    tabulate,
)
from .mesh import BoundaryTags, EdgeTopology, Mesh


@dataclass(frozen=True)
class ModelParams:
    """Material, stabilization and time-step parameters.

    ``lam_inv`` is the inverse Lame parameter so that the incompressible limit
    is simply ``lam_inv = 0``.
    """

    mu: float = 1.0
    lam_inv: float = 1.0
    alpha: float = 1.0
    s0: float = 1.0
    kappa: float = 1.0
    gamma2: float = 1.0
    dt: float = 1.0
    # weight of the consistency load paired with grad-grad stabilization (0 drops it)
    stab_rhs: float = 1.0

    def __post_init__(self):
        checks = {
            "mu": self.mu > 0,
            "lam_inv": self.lam_inv >= 0,
            "s0": self.s0 >= 0,
            "kappa": self.kappa > 0,
            "gamma2": self.gamma2 > 0,
            "dt": self.dt > 0,
            "stab_rhs": True,  # any finite weight
        }
        bad = [k for k, ok in checks.items() if not ok or not math.isfinite(getattr(self, k))]
        if bad:
            raise ValueError(f"invalid model parameters: {', '.join(bad)}")

    @classmethod
    def from_lambda(cls, mu: float, lam: float, **kw) -> "ModelParams":
        lam_inv = 0.0 if math.isinf(lam) else 1.0 / lam
        return cls(mu=mu, lam_inv=lam_inv, **kw)

    @property
    def lam(self) -> float:
        return math.inf if self.lam_inv == 0 else 1.0 / self.lam_inv

    @property
    def storage(self) -> float:
        """Coefficient ``s0 + alpha^2 / lambda`` of the pore-pressure mass."""
        return self.s0 + self.alpha**2 * self.lam_inv

    @property
    def kappa_dt(self) -> float:
        return self.kappa * self.dt

    @property
    def stab_scale(self) -> float:
        return self.gamma2 / (2.0 * self.mu)

    def with_(self, **changes) -> "ModelParams":
        return replace(self, **changes)


def _scatter(rows: NDArray, cols: NDArray, Ke: NDArray, shape: tuple[int, int]) -> sp.csr_matrix:
    nr, nc_ = rows.shape[1], cols.shape[1]
    I = np.broadcast_to(rows[:, :, None], (rows.shape[0], nr, nc_))
    J = np.broadcast_to(cols[:, None, :], (cols.shape[0], nr, nc_))
    A = sp.coo_matrix((Ke.ravel(), (I.ravel(), J.ravel())), shape=shape).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def _scatter_vec(dofs: NDArray, Fe: NDArray, n: int) -> NDArray:
    return np.bincount(dofs.ravel(), weights=Fe.ravel(), minlength=n)


def _require_scalar(dm: DofMap, name: str):
    if dm.kind.components != 1:
        raise ValueError(f"{name} must be a scalar space, got {dm.kind}")


class _Tab:
    """Basis tabulation of one space at the quadrature points of all cells."""

    def __init__(self, dm: DofMap, geom: CellGeometry, degree: int = 5):
        self.rule = quadrature_rule(degree)
        self.vals, ref_grads = tabulate(dm.kind, self.rule.points)
        self.grads = geom.physical_gradients(ref_grads)  # (nc, nq, nloc, 2)
        self.wdet = self.rule.weights[None, :] * np.abs(geom.detJ)[:, None]  # (nc, nq)
        self.nloc = dm.kind.scalar_local_dofs


def assemble_elasticity(mesh: Mesh, dofmap_u: DofMap, params: ModelParams) -> sp.csr_matrix:
    """Matrix of ``(2 mu eps(u), eps(v))`` on a blocked vector space."""
    if dofmap_u.kind.components != 2 or dofmap_u.kind.order == 0:
        raise ValueError("elasticity needs a continuous vector space")
    geom = cell_geometry(mesh)
    tab = _Tab(dofmap_u, geom)
    G, w = tab.grads, tab.wdet
    lap = np.einsum("cqai,cqbi,cq->cab", G, G, w)
    n = tab.nloc
    Ke = np.zeros((mesh.num_cells, 2 * n, 2 * n))
    for c in range(2):
        for d in range(2):
            # eps(phi_a e_c) : eps(phi_b e_d) = (delta_cd grad a . grad b + d_d a d_c b) / 2
            cross = np.einsum("cqa,cqb,cq->cab", G[..., d], G[..., c], w)
            blk = cross + (lap if c == d else 0.0)
            Ke[:, c * n:(c + 1) * n, d * n:(d + 1) * n] = params.mu * blk
    dofs = dofmap_u.cell_dofs
    return _scatter(dofs, dofs, Ke, (dofmap_u.num_dofs, dofmap_u.num_dofs))


def assemble_div_coupling(mesh: Mesh, dofmap_u: DofMap, dofmap_pt: DofMap) -> sp.csr_matrix:
    """``B[i, j] = (q_i, div v_j)``; rows are pressure dofs."""
    _require_scalar(dofmap_pt, "pressure space")
    geom = cell_geometry(mesh)
    tab_u = _Tab(dofmap_u, geom)
    psi, _ = tabulate(dofmap_pt.kind, tab_u.rule.points)
    Be = np.concatenate(
        [np.einsum("qi,cqb,cq->cib", psi, tab_u.grads[..., d], tab_u.wdet) for d in range(2)],
        axis=2,
    )
    return _scatter(dofmap_pt.cell_dofs, dofmap_u.cell_dofs, Be, (dofmap_pt.num_dofs, dofmap_u.num_dofs))


def assemble_weighted_mass(
    mesh: Mesh, dofmap_row: DofMap, dofmap_col: DofMap, weight: float = 1.0
) -> sp.csr_matrix:
    """``weight * (phi_j, psi_i)`` between two scalar spaces."""
    _require_scalar(dofmap_row, "row space")
    _require_scalar(dofmap_col, "column space")
    if weight < 0:
        raise ValueError("mass weight must be non-negative")
    geom = cell_geometry(mesh)
    rule = quadrature_rule(5)
    psi, _ = tabulate(dofmap_row.kind, rule.points)
    phi, _ = tabulate(dofmap_col.kind, rule.points)
    ref = np.einsum("qi,qj,q->ij", psi, phi, rule.weights)
    Ke = weight * np.abs(geom.detJ)[:, None, None] * ref[None]
    return _scatter(dofmap_row.cell_dofs, dofmap_col.cell_dofs, Ke, (dofmap_row.num_dofs, dofmap_col.num_dofs))


def assemble_laplacian(mesh: Mesh, dofmap: DofMap, cell_weights: NDArray | None = None) -> sp.csr_matrix:
    """``sum_T w_T (grad p, grad q)_T`` with unit weights by default."""
    _require_scalar(dofmap, "Laplacian space")
    geom = cell_geometry(mesh)
    tab = _Tab(dofmap, geom)
    Ke = np.einsum("cqai,cqbi,cq->cab", tab.grads, tab.grads, tab.wdet)
    if cell_weights is not None:
        Ke *= np.asarray(cell_weights)[:, None, None]
    return _scatter(dofmap.cell_dofs, dofmap.cell_dofs, Ke, (dofmap.num_dofs, dofmap.num_dofs))


def assemble_pressure_stiffness(mesh: Mesh, dofmap_pp: DofMap, params: ModelParams) -> sp.csr_matrix:
    """``(kappa dt grad p, grad q)``."""
    if dofmap_pp.kind.order != 1:
        raise ValueError("pore pressure space must be P1")
    return params.kappa_dt * assemble_laplacian(mesh, dofmap_pp)


def assemble_stab_jump(
    mesh: Mesh, topo: EdgeTopology, dofmap_pt: DofMap, params: ModelParams, edge_power: int = 1
) -> sp.csr_matrix:
    """Pressure-jump penalty ``gamma2/(2 mu) sum_e h_e^k <[p], [q]>_e`` over interior edges.

    ``edge_power`` is the exponent ``k``.  The default ``k = 1`` is the
    classical scaling for piecewise constant pressures; ``k = -1`` penalizes
    every jump with an O(1) weight and locks the pressure on fine meshes.
    """
    if dofmap_pt.kind.order != 0:
        raise ValueError("jump stabilization is defined for P0 pressures only")
    e = topo.interior_edges
    k1, k2 = topo.edge_cells[e, 0], topo.edge_cells[e, 1]
    h_e = topo.lengths[e]
    # for a piecewise constant the edge integral of the jump product is |e| [p][q]
    coef = params.stab_scale * h_e**edge_power * topo.lengths[e]
    rows = np.column_stack([k1, k2])
    Ke = coef[:, None, None] * np.array([[1.0, -1.0], [-1.0, 1.0]])[None]
    n = dofmap_pt.num_dofs
    return _scatter(rows, rows, Ke, (n, n))


def assemble_stab_gradgrad(mesh: Mesh, dofmap_pt: DofMap, params: ModelParams) -> sp.csr_matrix:
    """Pressure-gradient penalty ``gamma2/(2 mu) sum_T h_T^2 (grad p, grad q)_T``."""
    if dofmap_pt.kind.order != 1 or dofmap_pt.kind.components != 1:
        raise ValueError("gradient stabilization is defined for scalar P1 pressures only")
    hT = mesh.cell_diameters()
    return assemble_laplacian(mesh, dofmap_pt, params.stab_scale * hT**2)


@dataclass(frozen=True)
class PointLoad:
    """Linear map from data sampled at fixed points to a load vector.

    ``Q[a, k]`` holds basis function ``a`` times the quadrature weight of point
    ``k``; vector spaces reuse the scalar map for each component.  Boundary
    loads also carry the outward normal at every point.
    """

    x: NDArray
    y: NDArray
    Q: sp.csr_matrix  # (num_scalar, npts)
    components: int
    nx: NDArray | None = None
    ny: NDArray | None = None

    def apply(self, vals) -> NDArray:
        n = self.x.size
        if self.components == 2:
            return np.concatenate([self.Q @ np.broadcast_to(v, (n,)) for v in vals])
        return self.Q @ np.broadcast_to(np.asarray(vals, dtype=float), (n,))

    def __call__(self, fn: Callable, t: float) -> NDArray:
        if self.nx is None:
            return self.apply(fn(self.x, self.y, t))
        return self.apply(fn(self.x, self.y, t, self.nx, self.ny))


def _point_matrix(scalar_dofs: NDArray, phi: NDArray, w: NDArray, num_scalar: int) -> sp.csr_matrix:
    """Sparse (num_scalar, nc * nq) map from per-cell basis values (nc, nq, nloc) and weights (nc, nq)."""
    nc, nq, nloc = phi.shape
    rows = np.broadcast_to(scalar_dofs[:, None, :], (nc, nq, nloc))
    cols = np.broadcast_to(np.arange(nc * nq).reshape(nc, nq, 1), (nc, nq, nloc))
    data = phi * w[..., None]
    Q = sp.coo_matrix((data.ravel(), (rows.ravel(), cols.ravel())), shape=(num_scalar, nc * nq)).tocsr()
    Q.sort_indices()
    return Q


def cell_load(mesh: Mesh, dofmap: DofMap, degree: int = 5) -> PointLoad:
    """Operator for ``(fn, v)`` over all cells."""
    geom = cell_geometry(mesh)
    rule = quadrature_rule(degree)
    phi, _ = tabulate(dofmap.kind, rule.points)
    nc, nq = mesh.num_cells, rule.weights.size
    wdet = rule.weights[None, :] * np.abs(geom.detJ)[:, None]
    X = geom.map(rule.points).reshape(-1, 2)
    nloc = dofmap.kind.scalar_local_dofs
    phi_c = np.broadcast_to(phi[None], (nc, nq, nloc))
    Q = _point_matrix(dofmap.cell_dofs[:, :nloc], phi_c, wdet, dofmap.num_scalar)
    return PointLoad(X[:, 0].copy(), X[:, 1].copy(), Q, dofmap.kind.components)


def assemble_source(
    mesh: Mesh, dofmap: DofMap, fn: Callable, t: float, degree: int = 5
) -> NDArray:
    """Load vector ``(fn, v)`` for a scalar or blocked vector space."""
    return cell_load(mesh, dofmap, degree)(fn, t)


@dataclass(frozen=True)
class StabLoad:
    """Operator for ``-gamma2/(2 mu) sum_T h_T^2 (f, grad q)_T`` with f sampled at points."""

    x: NDArray
    y: NDArray
    Gx: sp.csr_matrix
    Gy: sp.csr_matrix

    def __call__(self, f: Callable, t: float) -> NDArray:
        fx, fy = f(self.x, self.y, t)
        n = self.x.size
        return self.Gx @ np.broadcast_to(fx, (n,)) + self.Gy @ np.broadcast_to(fy, (n,))


def stab_load(mesh: Mesh, dofmap_pt: DofMap, params: ModelParams, degree: int = 5) -> StabLoad:
    if dofmap_pt.kind.order != 1 or dofmap_pt.kind.components != 1:
        raise ValueError("stabilization load is defined for scalar P1 pressures only")
    geom = cell_geometry(mesh)
    tab = _Tab(dofmap_pt, geom, degree)
    w = -params.stab_scale * geom.diameters[:, None] ** 2 * tab.wdet
    X = geom.map(tab.rule.points).reshape(-1, 2)
    n = dofmap_pt.num_dofs
    Gx = _point_matrix(dofmap_pt.cell_dofs, tab.grads[..., 0], w, n)
    Gy = _point_matrix(dofmap_pt.cell_dofs, tab.grads[..., 1], w, n)
    return StabLoad(X[:, 0].copy(), X[:, 1].copy(), Gx, Gy)


def assemble_stab_rhs(
    mesh: Mesh, dofmap_pt: DofMap, f: Callable | None, params: ModelParams, t: float
) -> NDArray:
    """Consistency term ``-gamma2/(2 mu) sum_T h_T^2 (f, grad q)_T`` of the gradient penalty."""
    if dofmap_pt.kind.order != 1:
        raise ValueError("stabilization load is defined for P1 pressures only")
    if f is None:
        return np.zeros(dofmap_pt.num_dofs)
    return stab_load(mesh, dofmap_pt, params)(f, t)


@dataclass(frozen=True)
class BoundaryQuadrature:
    """Gauss points on a set of boundary edges, mapped into their cells."""

    cells: NDArray  # (ne,)
    bary: NDArray  # (ne, nq, 3) barycentric coords in the owning cell
    points: NDArray  # (ne, nq, 2)
    weights: NDArray  # (ne, nq) physical weights
    normals: NDArray  # (ne, 2) outward unit normals


def boundary_quadrature(mesh: Mesh, topo: EdgeTopology, edge_ids: NDArray, npts: int = 3) -> BoundaryQuadrature:
    edge_ids = np.asarray(edge_ids, dtype=np.int64)
    cells = topo.edge_cells[edge_ids, 0]
    local = topo.edge_local[edge_ids, 0]
    s, w = edge_rule(npts)
    a = mesh.vertices[topo.edges[edge_ids, 0]]
    b = mesh.vertices[topo.edges[edge_ids, 1]]
    pts = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
    L = np.linalg.norm(b - a, axis=1)
    tang = (b - a) / L[:, None]
    normal = np.column_stack([tang[:, 1], -tang[:, 0]])
    opposite = mesh.vertices[mesh.triangles[cells, local]]
    flip = np.einsum("ei,ei->e", normal, a - opposite) < 0
    normal[flip] *= -1.0
    geom = cell_geometry(mesh)
    inv = np.linalg.inv(geom.J[cells])
    xhat = np.einsum("eij,eqj->eqi", inv, pts - geom.origin[cells][:, None, :])
    bary = np.concatenate([1.0 - xhat.sum(axis=2, keepdims=True), xhat], axis=2)
    return BoundaryQuadrature(cells, bary, pts, L[:, None] * w[None, :], normal)


def boundary_load(mesh: Mesh, topo: EdgeTopology, dofmap: DofMap, edge_ids: NDArray) -> PointLoad:
    """Operator for ``<fn(x, t, n), v>`` over the given boundary edges."""
    edge_ids = np.asarray(edge_ids, dtype=np.int64)
    bq = boundary_quadrature(mesh, topo, edge_ids)
    ne, nq = bq.weights.shape
    nloc = dofmap.kind.scalar_local_dofs
    phi, _ = tabulate(dofmap.kind, bq.bary.reshape(-1, 3))
    phi = phi.reshape(ne, nq, -1)[..., :nloc]
    Q = _point_matrix(dofmap.cell_dofs[bq.cells][:, :nloc], phi, bq.weights, dofmap.num_scalar)
    nx = np.repeat(bq.normals[:, 0], nq)
    ny = np.repeat(bq.normals[:, 1], nq)
    pts = bq.points.reshape(-1, 2)
    return PointLoad(pts[:, 0].copy(), pts[:, 1].copy(), Q, dofmap.kind.components, nx, ny)


def assemble_boundary_load(
    mesh: Mesh, topo: EdgeTopology, dofmap: DofMap, edge_ids: NDArray, fn: Callable, t: float
) -> NDArray:
    """``<fn(x, t, n), v>`` over the given boundary edges."""
    if len(edge_ids) == 0:
        return np.zeros(dofmap.num_dofs)
    return boundary_load(mesh, topo, dofmap, edge_ids)(fn, t)


class LoadAssembler:
    """Right-hand sides of the static step without history terms.

    Momentum: ``(f, v) + <sigma n, v>`` on the traction boundary.  Pore
    pressure: ``-dt (g, q) + dt <w, q>`` on the flux boundary, where ``w`` is
    the prescribed outward Darcy flux.  The total-pressure load is zero; the
    gradient-penalty consistency term is added by the model layer.  Quadrature
    operators are built once, so repeated calls only sample the data.
    """

    def __init__(self, mesh: Mesh, topo: EdgeTopology, dofmaps: Sequence[DofMap],
                 tags: BoundaryTags, params: ModelParams):
        self.dofmaps = tuple(dofmaps)
        self.params = params
        self._mesh, self._topo, self._tags = mesh, topo, tags
        self._ops: dict[str, PointLoad | None] = {}

    def _op(self, key: str) -> PointLoad | None:
        if key not in self._ops:
            dm_u, _, dm_pp = self.dofmaps
            if key == "f":
                op = cell_load(self._mesh, dm_u)
            elif key == "g":
                op = cell_load(self._mesh, dm_pp)
            else:
                dm, name = (dm_u, "traction") if key == "traction" else (dm_pp, "flux")
                edges = self._tags.edges(name)
                op = boundary_load(self._mesh, self._topo, dm, edges) if edges.size else None
            self._ops[key] = op
        return self._ops[key]

    def __call__(self, f: Callable | None, g: Callable | None, traction: Callable | None,
                 t: float, flux: Callable | None = None) -> tuple[NDArray, NDArray, NDArray]:
        dm_u, dm_pt, dm_pp = self.dofmaps
        Fu = np.zeros(dm_u.num_dofs)
        if f is not None:
            Fu += self._op("f")(f, t)
        if traction is not None and self._op("traction") is not None:
            Fu += self._op("traction")(traction, t)
        Fpt = np.zeros(dm_pt.num_dofs)
        Fpp = np.zeros(dm_pp.num_dofs)
        if g is not None:
            Fpp -= self.params.dt * self._op("g")(g, t)
        if flux is not None and self._op("flux") is not None:
            Fpp += self.params.dt * self._op("flux")(flux, t)
        return Fu, Fpt, Fpp


def assemble_loads(
    mesh: Mesh,
    topo: EdgeTopology,
    dofmaps: Sequence[DofMap],
    f: Callable | None,
    g: Callable | None,
    traction: Callable | None,
    tags: BoundaryTags,
    params: ModelParams,
    t: float,
    flux: Callable | None = None,
) -> tuple[NDArray, NDArray, NDArray]:
    """One-off evaluation of :class:`LoadAssembler`."""
    return LoadAssembler(mesh, topo, dofmaps, tags, params)(f, g, traction, t, flux)


# ---------------------------------------------------------------------------
# block systems


@dataclass
class BlockSystem:
    """Square block operator with one block row/column per field.

    ``blocks[i][j]`` is a sparse matrix or ``None`` for a zero block.  After
    :func:`apply_dirichlet` the blocks act on free dofs only; ``free[i]`` maps
    them back into field ``i`` and ``lifting[i][j]`` keeps the free-by-
    constrained couplings used to lift new right-hand sides.
    """

    blocks: list[list[sp.spmatrix | None]]
    rhs: list[NDArray]
    full_sizes: list[int] = field(default_factory=list)
    free: list[NDArray] | None = None
    constraints: list[DirichletSet] | None = None
    lifting: list[list[sp.spmatrix | None]] | None = None

    def __post_init__(self):
        if not self.full_sizes:
            self.full_sizes = self.sizes

    @property
    def nfields(self) -> int:
        return len(self.blocks)

    @property
    def sizes(self) -> list[int]:
        out = []
        for i, row in enumerate(self.blocks):
            blk = next((b for b in row if b is not None), None)
            if blk is None:
                raise ValueError(f"block row {i} is entirely zero")
            out.append(blk.shape[0])
        return out

    @property
    def offsets(self) -> NDArray:
        return np.concatenate([[0], np.cumsum(self.sizes)])

    def matrix(self) -> sp.csr_matrix:
        sizes = self.sizes
        rows = []
        for i, row in enumerate(self.blocks):
            rows.append([
                b if b is not None else sp.csr_matrix((sizes[i], sizes[j]))
                for j, b in enumerate(row)
            ])
        A = sp.bmat(rows, format="csr")
        A.sum_duplicates()
        A.sort_indices()
        return A

    def vector(self) -> NDArray:
        return np.concatenate(self.rhs)

    def split(self, x: NDArray) -> list[NDArray]:
        off = self.offsets
        return [x[off[i]:off[i + 1]] for i in range(self.nfields)]

    def lift(self, full_rhs: Sequence[NDArray], constraints: Sequence[DirichletSet] | None = None) -> NDArray:
        """Reduced right-hand side for new loads and boundary values."""
        if self.free is None:
            return np.concatenate(full_rhs)
        cons = list(constraints) if constraints is not None else self.constraints
        out = []
        for i in range(self.nfields):
            r = np.asarray(full_rhs[i], dtype=float)[self.free[i]].copy()
            for j in range(self.nfields):
                L = self.lifting[i][j]
                if L is not None and cons[j].dofs.size:
                    r -= L @ cons[j].values
            out.append(r)
        return np.concatenate(out)

    def expand(self, x: NDArray, constraints: Sequence[DirichletSet] | None = None) -> list[NDArray]:
        """Full field vectors from a reduced solution, inserting boundary values."""
        parts = self.split(x)
        if self.free is None:
            return [p.copy() for p in parts]
        cons = list(constraints) if constraints is not None else self.constraints
        out = []
        for i, part in enumerate(parts):
            full = np.zeros(self.full_sizes[i])
            full[self.free[i]] = part
            full[cons[i].dofs] = cons[i].values
            out.append(full)
        return out


def apply_dirichlet(system: BlockSystem, sets: Sequence[DirichletSet | None]) -> BlockSystem:
    """Eliminate constrained dofs symmetrically and lift the right-hand side."""
    if system.free is not None:
        raise ValueError("system already has boundary conditions applied")
    sizes = system.sizes
    cons: list[DirichletSet] = []
    free: list[NDArray] = []
    for n, s in zip(sizes, sets):
        s = s if s is not None else DirichletSet.empty()
        dofs = np.asarray(s.dofs, dtype=np.int64)
        if dofs.size and (dofs.min() < 0 or dofs.max() >= n):
            raise IndexError("constraint index out of range")
        if np.unique(dofs).size != dofs.size:
            raise ValueError("duplicate constrained dofs")
        mask = np.ones(n, dtype=bool)
        mask[dofs] = False
        free.append(np.flatnonzero(mask))
        cons.append(s)
    blocks, lifting = [], []
    for i, row in enumerate(system.blocks):
        brow, lrow = [], []
        for j, b in enumerate(row):
            if b is None:
                brow.append(None)
                lrow.append(None)
                continue
            b = sp.csr_matrix(b)
            rows = b[free[i]]
            brow.append(rows[:, free[j]].tocsr())
            lrow.append(rows[:, cons[j].dofs].tocsr() if cons[j].dofs.size else None)
        blocks.append(brow)
        lifting.append(lrow)
    reduced = BlockSystem(blocks=blocks, rhs=[], full_sizes=sizes, free=free, constraints=cons, lifting=lifting)
    reduced.rhs = reduced.split(reduced.lift(system.rhs, cons))
    return reduced


def write_matrix_market(A: sp.spmatrix, path, comment: str = "") -> None:
    """Dump a sparse matrix in MatrixMarket coordinate format."""
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), comment=comment, field="real", symmetry="general")
