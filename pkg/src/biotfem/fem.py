"""Lagrange elements on triangles, quadrature rules and degree-of-freedom maps.

Reference triangle: vertices (0, 0), (1, 0), (0, 1), barycentric coordinates
``(1 - x - y, x, y)``.  Local P2 dofs are the three vertices followed by the
three edge midpoints, edge ``k`` being the one opposite vertex ``k`` (the same
convention as :class:`biotfem.mesh.EdgeTopology`).

Vector-valued spaces are blocked by component: global dofs ``[0, n)`` carry
the x-component and ``[n, 2n)`` the y-component of the scalar space.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from .mesh import BoundaryTags, EdgeTopology, Mesh

BARY_TOL = 1e-12

_REF_GRAD_BARY = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


@dataclass(frozen=True)
class ElementKind:
    order: int
    components: int = 1

    def __post_init__(self):
        if self.order not in (0, 1, 2):
            raise ValueError(f"unsupported polynomial order {self.order}")
        if self.components not in (1, 2):
            raise ValueError(f"unsupported component count {self.components}")

    @property
    def continuous(self) -> bool:
        return self.order > 0

    @property
    def scalar_local_dofs(self) -> int:
        return (1, 3, 6)[self.order]

    @property
    def local_dofs(self) -> int:
        return self.components * self.scalar_local_dofs

    def __str__(self) -> str:
        return f"P{self.order}" + ("^2" if self.components == 2 else "")


P0 = ElementKind(0)
P1 = ElementKind(1)
P2 = ElementKind(2)
P1_VEC = ElementKind(1, 2)
P2_VEC = ElementKind(2, 2)


def tabulate(kind: ElementKind, bary: NDArray) -> tuple[NDArray, NDArray]:
    """Scalar shape functions at barycentric points.

    Returns values ``(npts, nloc)`` and reference gradients ``(npts, nloc, 2)``.
    Vector kinds return their scalar factor.
    """
    lam = np.atleast_2d(np.asarray(bary, dtype=float))
    npts = lam.shape[0]
    G = _REF_GRAD_BARY
    if kind.order == 0:
        return np.ones((npts, 1)), np.zeros((npts, 1, 2))
    if kind.order == 1:
        return lam.copy(), np.broadcast_to(G, (npts, 3, 2)).copy()
    vals = np.empty((npts, 6))
    grads = np.empty((npts, 6, 2))
    for i in range(3):
        vals[:, i] = lam[:, i] * (2.0 * lam[:, i] - 1.0)
        grads[:, i] = (4.0 * lam[:, i] - 1.0)[:, None] * G[i]
    for k in range(3):
        a, b = (k + 1) % 3, (k + 2) % 3
        vals[:, 3 + k] = 4.0 * lam[:, a] * lam[:, b]
        grads[:, 3 + k] = 4.0 * (lam[:, a, None] * G[b] + lam[:, b, None] * G[a])
    return vals, grads


def reference_basis(kind: ElementKind, point) -> tuple[NDArray, NDArray]:
    """Shape function values and reference gradients at one barycentric point."""
    lam = np.asarray(point, dtype=float)
    if lam.shape != (3,):
        raise ValueError("expected three barycentric coordinates")
    if np.any(lam < -BARY_TOL) or abs(lam.sum() - 1.0) > BARY_TOL:
        raise ValueError(f"point {lam} lies outside the reference triangle")
    vals, grads = tabulate(kind, lam[None, :])
    return vals[0], grads[0]


@dataclass(frozen=True)
class QuadratureRule:
    points: NDArray  # (nq, 3) barycentric
    weights: NDArray  # (nq,), sum 1/2
    degree: int

    @property
    def xy(self) -> NDArray:
        return self.points[:, 1:]


def _orbit(entries):
    """Expand (weight, a, b, c) symmetric orbits; weights normalised to area 1."""
    pts, wts = [], []
    for w, *abc in entries:
        perms = sorted({(abc[i], abc[j], abc[k]) for i, j, k in
                        [(0, 1, 2), (1, 2, 0), (2, 0, 1), (0, 2, 1), (2, 1, 0), (1, 0, 2)]})
        for p in perms:
            pts.append(p)
            wts.append(w)
    return np.array(pts), np.array(wts)


def _dunavant(degree: int):
    s15 = np.sqrt(15.0)
    if degree <= 1:
        return _orbit([(1.0, 1 / 3, 1 / 3, 1 / 3)])
    if degree == 2:
        return _orbit([(1 / 3, 2 / 3, 1 / 6, 1 / 6)])
    if degree <= 4:
        return _orbit([
            (0.223381589678011, 0.108103018168070, 0.445948490915965, 0.445948490915965),
            (0.109951743655322, 0.816847572980459, 0.091576213509771, 0.091576213509771),
        ])
    if degree == 5:
        a = (6.0 - s15) / 21.0
        b = (6.0 + s15) / 21.0
        return _orbit([
            (9.0 / 40.0, 1 / 3, 1 / 3, 1 / 3),
            ((155.0 - s15) / 1200.0, 1.0 - 2.0 * a, a, a),
            ((155.0 + s15) / 1200.0, 1.0 - 2.0 * b, b, b),
        ])
    return _orbit([
        (0.116786275726379, 0.501426509658179, 0.249286745170910, 0.249286745170910),
        (0.050844906370207, 0.873821971016996, 0.063089014491502, 0.063089014491502),
        (0.082851075618374, 0.053145049844817, 0.310352451033784, 0.636502499121399),
    ])


@lru_cache(maxsize=None)
def quadrature_rule(degree: int = 5) -> QuadratureRule:
    """Symmetric Gauss rule on the reference triangle exact to ``degree``."""
    if int(degree) != degree or not 0 <= degree <= 6:
        raise ValueError(f"no triangle rule for degree {degree!r} (supported: 0..6)")
    pts, w = _dunavant(int(degree))
    # the tabulated constants carry 15 digits; renormalise so weights sum exactly
    w = 0.5 * w / w.sum()
    exact = {0: 1, 1: 1, 2: 2, 3: 4, 4: 4, 5: 5, 6: 6}[int(degree)]
    return QuadratureRule(points=pts, weights=w, degree=exact)


@lru_cache(maxsize=None)
def edge_rule(npts: int = 3) -> tuple[NDArray, NDArray]:
    """Gauss-Legendre points in [0, 1] and weights summing to 1."""
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


@dataclass(frozen=True)
class CellGeometry:
    """Affine maps of all cells: ``x = origin + J @ xhat``."""

    origin: NDArray  # (nc, 2)
    J: NDArray  # (nc, 2, 2)
    detJ: NDArray  # (nc,)
    invJT: NDArray  # (nc, 2, 2)
    diameters: NDArray  # (nc,)

    @property
    def areas(self) -> NDArray:
        return 0.5 * np.abs(self.detJ)

    def map(self, bary: NDArray) -> NDArray:
        """Physical coordinates of barycentric points, shape (nc, npts, 2)."""
        xy = np.asarray(bary)[:, 1:]
        return self.origin[:, None, :] + np.einsum("cij,qj->cqi", self.J, xy)

    def physical_gradients(self, ref_grads: NDArray) -> NDArray:
        """Map reference gradients (npts, nloc, 2) to (nc, npts, nloc, 2)."""
        return np.einsum("cij,qaj->cqai", self.invJT, ref_grads)


def cell_geometry(mesh: Mesh) -> CellGeometry:
    p = mesh.cell_coords()
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    invJT = np.empty_like(J)
    invJT[:, 0, 0] = J[:, 1, 1] / det
    invJT[:, 0, 1] = -J[:, 1, 0] / det
    invJT[:, 1, 0] = -J[:, 0, 1] / det
    invJT[:, 1, 1] = J[:, 0, 0] / det
    return CellGeometry(origin=p[:, 0], J=J, detJ=det, invJT=invJT, diameters=mesh.cell_diameters())


@dataclass(frozen=True)
class DofMap:
    """Global numbering of one finite element space on a mesh."""

    kind: ElementKind
    num_scalar: int
    cell_dofs: NDArray  # (nc, local_dofs)
    coords: NDArray  # (num_dofs, 2) nodal points
    component: NDArray  # (num_dofs,)
    num_vertices: int
    edges: NDArray  # edge -> vertex pairs, needed for boundary lookup

    @property
    def num_dofs(self) -> int:
        return self.kind.components * self.num_scalar

    def scalar_dofs_on_edges(self, edge_ids: NDArray) -> NDArray:
        """Scalar dofs whose nodes lie on the given edges (P1/P2 only)."""
        edge_ids = np.asarray(edge_ids, dtype=np.int64)
        if self.kind.order == 0 or edge_ids.size == 0:
            return np.empty(0, dtype=np.int64)
        dofs = [self.edges[edge_ids].ravel()]
        if self.kind.order == 2:
            dofs.append(self.num_vertices + edge_ids)
        return np.unique(np.concatenate(dofs))

    def dofs_on_edges(self, edge_ids: NDArray) -> NDArray:
        scalar = self.scalar_dofs_on_edges(edge_ids)
        return np.concatenate([scalar + c * self.num_scalar for c in range(self.kind.components)])


def build_dofmap(mesh: Mesh, topo: EdgeTopology, kind: ElementKind) -> DofMap:
    nv = mesh.num_vertices
    if kind.order == 0:
        scalar_cells = np.arange(mesh.num_cells)[:, None]
        coords = mesh.cell_coords().mean(axis=1)
    elif kind.order == 1:
        scalar_cells = mesh.triangles.copy()
        coords = mesh.vertices.copy()
    else:
        scalar_cells = np.hstack([mesh.triangles, nv + topo.cell_edges])
        mids = 0.5 * (mesh.vertices[topo.edges[:, 0]] + mesh.vertices[topo.edges[:, 1]])
        coords = np.vstack([mesh.vertices, mids])
    n = coords.shape[0]
    if kind.components == 2:
        cell_dofs = np.hstack([scalar_cells, scalar_cells + n])
        coords = np.vstack([coords, coords])
        component = np.repeat([0, 1], n)
    else:
        cell_dofs = scalar_cells
        component = np.zeros(n, dtype=np.int64)
    return DofMap(
        kind=kind,
        num_scalar=n,
        cell_dofs=np.ascontiguousarray(cell_dofs, dtype=np.int64),
        coords=coords,
        component=component,
        num_vertices=nv,
        edges=topo.edges,
    )


def interpolate(dofmap: DofMap, fn: Callable, t: float | None = None) -> NDArray:
    """Nodal interpolant of ``fn(x, y[, t])``; vector functions return a pair."""
    pts = dofmap.coords[: dofmap.num_scalar]
    args = (pts[:, 0], pts[:, 1]) if t is None else (pts[:, 0], pts[:, 1], t)
    vals = fn(*args)
    if dofmap.kind.components == 2:
        vx, vy = vals
        n = dofmap.num_scalar
        return np.concatenate([np.broadcast_to(vx, n), np.broadcast_to(vy, n)]).astype(float)
    return np.broadcast_to(np.asarray(vals, dtype=float), (dofmap.num_scalar,)).copy()


@dataclass(frozen=True)
class DirichletSet:
    """Constrained dofs and their prescribed values at time ``t``."""

    dofs: NDArray
    values: NDArray
    t: float | None = None
    value_fn: Callable | None = None
    coords: NDArray | None = None
    vector: bool = False

    def at(self, t: float) -> "DirichletSet":
        """Re-evaluate the boundary data at another time."""
        if self.value_fn is None:
            return self
        values = _eval_boundary(self.value_fn, self.coords, t, self.vector, self.dofs)
        return DirichletSet(self.dofs, values, t, self.value_fn, self.coords, self.vector)

    @classmethod
    def empty(cls) -> "DirichletSet":
        return cls(np.empty(0, dtype=np.int64), np.empty(0))


def _eval_boundary(fn, coords, t, vector, dofs):
    if dofs.size == 0:
        return np.empty(0)
    x, y = coords[:, 0], coords[:, 1]
    vals = fn(x, y) if t is None else fn(x, y, t)
    if vector:
        n = coords.shape[0]
        vx, vy = vals
        return np.concatenate([np.broadcast_to(vx, (n,)), np.broadcast_to(vy, (n,))]).astype(float)
    return np.broadcast_to(np.asarray(vals, dtype=float), (dofs.size,)).copy()


def dirichlet_set(
    dofmap: DofMap,
    tags: BoundaryTags,
    which: str,
    value_fn: Callable | None = None,
    t: float | None = None,
) -> DirichletSet:
    """Constrain every dof whose node lies on an edge tagged ``which``.

    ``value_fn(x, y, t)`` (or ``value_fn(x, y)`` when ``t`` is None) gives the
    prescribed value; ``None`` means homogeneous data.
    """
    edge_ids = tags.edges(which)
    scalar = dofmap.scalar_dofs_on_edges(edge_ids)
    comps = dofmap.kind.components
    dofs = np.concatenate([scalar + c * dofmap.num_scalar for c in range(comps)])
    # vector data is evaluated on the scalar nodes and stacked by component
    node_coords = dofmap.coords[scalar]
    vector = comps == 2
    if value_fn is None:
        return DirichletSet(dofs, np.zeros(dofs.size), t, None, node_coords, vector)
    vals = _eval_boundary(value_fn, node_coords, t, vector, dofs)
    return DirichletSet(dofs, vals, t, value_fn, node_coords, vector)
