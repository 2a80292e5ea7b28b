"""Structured triangulations of the unit square.

Vertices are numbered row-major (``index = j * (N + 1) + i`` for the vertex at
``(i / N, j / N)``) and every grid square is split along its lower-left to
upper-right diagonal, so assembly order is fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np
from numpy.typing import NDArray

# Geometric tolerance for locating edges on the sides of the unit square.
SIDE_TOL = 1e-12

SIDES = ("left", "right", "bottom", "top")


@dataclass(frozen=True)
class Mesh:
    """Triangular mesh of the unit square with ``N`` subdivisions per side."""

    vertices: NDArray[np.float64]  # (nv, 2)
    triangles: NDArray[np.int64]  # (nc, 3), counterclockwise
    N: int

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_cells(self) -> int:
        return self.triangles.shape[0]

    @property
    def h(self) -> float:
        return 1.0 / self.N

    def cell_coords(self) -> NDArray[np.float64]:
        """Vertex coordinates per cell, shape (nc, 3, 2)."""
        return self.vertices[self.triangles]

    def signed_areas(self) -> NDArray[np.float64]:
        p = self.cell_coords()
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def cell_diameters(self) -> NDArray[np.float64]:
        """Longest edge of every cell."""
        p = self.cell_coords()
        lengths = np.stack(
            [np.linalg.norm(p[:, (k + 2) % 3] - p[:, (k + 1) % 3], axis=1) for k in range(3)],
            axis=1,
        )
        return lengths.max(axis=1)


@dataclass(frozen=True)
class EdgeTopology:
    """Unique undirected edges and their cell incidence.

    ``cell_edges[c, k]`` is the edge opposite local vertex ``k`` of cell ``c``.
    ``edge_cells[e]`` holds the (up to) two incident cells, ``-1`` when absent;
    ``edge_local[e]`` the matching local edge numbers.
    """

    edges: NDArray[np.int64]  # (ne, 2), sorted vertex pairs
    cell_edges: NDArray[np.int64]  # (nc, 3)
    edge_cells: NDArray[np.int64]  # (ne, 2)
    edge_local: NDArray[np.int64]  # (ne, 2)
    lengths: NDArray[np.float64]  # (ne,)
    interior: NDArray[np.bool_]  # (ne,)

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def boundary_edges(self) -> NDArray[np.int64]:
        return np.flatnonzero(~self.interior)

    @property
    def interior_edges(self) -> NDArray[np.int64]:
        return np.flatnonzero(self.interior)


@dataclass(frozen=True)
class BoundaryTags:
    """Boolean masks over all edges for the two boundary partitions.

    Interior edges are never tagged.  ``dirichlet_u | traction`` and
    ``dirichlet_p | flux`` each cover exactly the boundary edges.
    """

    dirichlet_u: NDArray[np.bool_]
    traction: NDArray[np.bool_]
    dirichlet_p: NDArray[np.bool_]
    flux: NDArray[np.bool_]

    def edges(self, name: str) -> NDArray[np.int64]:
        return np.flatnonzero(getattr(self, name))


def unit_square_mesh(N: int) -> Mesh:
    if int(N) != N or N < 1:
        raise ValueError(f"N must be a positive integer, got {N!r}")
    N = int(N)
    xs = np.linspace(0.0, 1.0, N + 1)
    X, Y = np.meshgrid(xs, xs)  # row-major: y outer, x inner
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(N), np.arange(N))
    v00 = (j * (N + 1) + i).ravel()
    v10 = v00 + 1
    v01 = v00 + N + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * N * N, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper
    return Mesh(vertices=vertices, triangles=triangles, N=N)


def build_edges(mesh: Mesh) -> EdgeTopology:
    tri = mesh.triangles
    nc = tri.shape[0]
    # local edge k is opposite local vertex k
    local = np.stack([tri[:, [1, 2]], tri[:, [2, 0]], tri[:, [0, 1]]], axis=1)  # (nc, 3, 2)
    pairs = np.sort(local.reshape(-1, 2), axis=1)
    edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    cell_edges = inverse.reshape(nc, 3)

    ne = edges.shape[0]
    edge_cells = np.full((ne, 2), -1, dtype=np.int64)
    edge_local = np.full((ne, 2), -1, dtype=np.int64)
    flat_cells = np.repeat(np.arange(nc), 3)
    flat_local = np.tile(np.arange(3), nc)
    # stable sort keeps cell order, so the lower-numbered cell goes first
    order = np.argsort(inverse, kind="stable")
    sorted_edges = inverse[order]
    first = np.ones(order.size, dtype=bool)
    first[1:] = sorted_edges[1:] != sorted_edges[:-1]
    slot = np.where(first, 0, 1)
    edge_cells[sorted_edges, slot] = flat_cells[order]
    edge_local[sorted_edges, slot] = flat_local[order]

    lengths = np.linalg.norm(mesh.vertices[edges[:, 1]] - mesh.vertices[edges[:, 0]], axis=1)
    interior = edge_cells[:, 1] >= 0
    return EdgeTopology(
        edges=edges,
        cell_edges=cell_edges,
        edge_cells=edge_cells,
        edge_local=edge_local,
        lengths=lengths,
        interior=interior,
    )


def side_masks(mesh: Mesh, topo: EdgeTopology) -> dict[str, NDArray[np.bool_]]:
    """Which edges lie on each side of the unit square."""
    a = mesh.vertices[topo.edges[:, 0]]
    b = mesh.vertices[topo.edges[:, 1]]
    on = lambda coord, value: (np.abs(a[:, coord] - value) < SIDE_TOL) & (
        np.abs(b[:, coord] - value) < SIDE_TOL
    )
    return {
        "left": on(0, 0.0),
        "right": on(0, 1.0),
        "bottom": on(1, 0.0),
        "top": on(1, 1.0),
    }


def parse_sides(expr: str) -> set[str]:
    expr = expr.strip().lower()
    if expr in ("", "none"):
        return set()
    if expr == "all":
        return set(SIDES)
    names = {s.strip() for s in expr.split("|")}
    unknown = names - set(SIDES)
    if unknown:
        raise ValueError(f"unknown boundary side(s) {sorted(unknown)}; use {SIDES}, 'all' or 'none'")
    return names


EdgePredicate = Callable[[NDArray[np.float64]], NDArray[np.bool_]]


def _select(
    mesh: Mesh, topo: EdgeTopology, selector: str | EdgePredicate
) -> NDArray[np.bool_]:
    boundary = ~topo.interior
    if callable(selector):
        mid = 0.5 * (mesh.vertices[topo.edges[:, 0]] + mesh.vertices[topo.edges[:, 1]])
        return boundary & np.asarray(selector(mid), dtype=bool)
    masks = side_masks(mesh, topo)
    sel = np.zeros(topo.num_edges, dtype=bool)
    for name in parse_sides(selector):
        sel |= masks[name]
    return sel & boundary


def tag_boundary(
    mesh: Mesh,
    topo: EdgeTopology,
    spec: Mapping[str, str | EdgePredicate],
) -> BoundaryTags:
    """Tag boundary edges for the displacement and pressure partitions.

    ``spec`` names one side of each partition, e.g.
    ``{"dirichlet_u": "left|right", "dirichlet_p": "all"}``; the complementary
    part (traction / flux) receives the remaining boundary edges.  Either side
    of a partition may be given; if both are given they must cover the
    boundary exactly once.  A selector is a ``|``-separated list of
    ``left/right/bottom/top``, ``all``, ``none``, or a predicate on edge
    midpoints.
    """
    boundary = ~topo.interior
    tags: dict[str, NDArray[np.bool_]] = {}
    for first, second in (("dirichlet_u", "traction"), ("dirichlet_p", "flux")):
        if first not in spec and second not in spec:
            raise ValueError(f"partition descriptor needs '{first}' or '{second}'")
        a = _select(mesh, topo, spec[first]) if first in spec else None
        b = _select(mesh, topo, spec[second]) if second in spec else None
        if a is None:
            a = boundary & ~b
        if b is None:
            b = boundary & ~a
        if np.any(a & b):
            raise ValueError(f"'{first}' and '{second}' overlap")
        if np.any(boundary & ~(a | b)):
            raise ValueError(f"boundary edges left untagged by '{first}'/'{second}'")
        tags[first], tags[second] = a, b
    unknown = set(spec) - set(tags)
    if unknown:
        raise ValueError(f"unknown partition names {sorted(unknown)}")
    return BoundaryTags(**tags)


def dump_mesh(mesh: Mesh, path) -> None:
    """Write a plain-text dump: vertex count, vertices, cell count, cells."""
    with open(path, "w") as fh:
        fh.write(f"{mesh.num_vertices}\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.17g} {y:.17g}\n")
        fh.write(f"{mesh.num_cells}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"{a} {b} {c}\n")
