"""Structured triangulations of the unit square.

Each of the ``n x n`` squares is split along its positive-slope diagonal.
Triangles are stored counter-clockwise; local edge ``k`` of a triangle is the
edge opposite local vertex ``k``. Every edge carries a global unit normal
obtained by rotating the tangent (lower vertex index -> higher) clockwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True, eq=False)
class TriMesh:
    n: int
    vertices: np.ndarray  # (V, 2)
    triangles: np.ndarray  # (F, 3), counter-clockwise
    edges: np.ndarray  # (E, 2), sorted vertex pairs
    tri_edges: np.ndarray  # (F, 3), local edge k opposite local vertex k
    tri_edge_signs: np.ndarray  # (F, 3), +1 where the global normal points out of the triangle
    edge_tris: np.ndarray  # (E, 2), incident triangles, -1 padding on the boundary
    boundary_edges: np.ndarray  # (E,) bool
    boundary_vertices: np.ndarray  # (V,) bool
    areas: np.ndarray = field(repr=False)
    centroids: np.ndarray = field(repr=False)
    edge_normals: np.ndarray = field(repr=False)
    edge_lengths: np.ndarray = field(repr=False)
    edge_midpoints: np.ndarray = field(repr=False)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def h(self) -> float:
        return 1.0 / self.n

    def euler_characteristic(self) -> int:
        return self.num_vertices - self.num_edges + self.num_triangles

    def adjacency(self, edge: int) -> list[tuple[int, int]]:
        """Triangles incident to ``edge`` with the sign relating their outward
        normal to the edge's global normal."""
        if not 0 <= edge < self.num_edges:
            raise IndexError(f"edge index {edge} out of range [0, {self.num_edges})")
        out = []
        for tri in self.edge_tris[edge]:
            if tri < 0:
                continue
            k = int(np.flatnonzero(self.tri_edges[tri] == edge)[0])
            out.append((int(tri), int(self.tri_edge_signs[tri, k])))
        return out

    def dump(self, path: str | Path) -> None:
        """Write vertex, triangle and edge tables as plain text."""
        path = Path(path)
        with path.open("w", encoding="utf-8") as fh:
            fh.write(f"# structured mesh n={self.n}\n")
            fh.write(f"vertices {self.num_vertices}\n")
            for i, (x, y) in enumerate(self.vertices):
                fh.write(f"{i} {x:.17g} {y:.17g} {int(self.boundary_vertices[i])}\n")
            fh.write(f"triangles {self.num_triangles}\n")
            for i, (a, b, c) in enumerate(self.triangles):
                fh.write(f"{i} {a} {b} {c}\n")
            fh.write(f"edges {self.num_edges}\n")
            for i, (a, b) in enumerate(self.edges):
                nx, ny = self.edge_normals[i]
                fh.write(f"{i} {a} {b} {nx:.17g} {ny:.17g} {int(self.boundary_edges[i])}\n")


def build_structured(n: int) -> TriMesh:
    """Uniform mesh of [0, 1]^2 with ``2 n^2`` triangles."""
    if int(n) != n or n < 1:
        raise ValueError(f"subdivision count must be a positive integer, got {n!r}")
    n = int(n)
    ticks = np.arange(n + 1) / n
    xs, ys = np.meshgrid(ticks, ticks)
    vertices = np.column_stack([xs.ravel(), ys.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i, j = i.ravel(), j.ravel()
    v00 = i + j * (n + 1)
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    # local edge k joins local vertices k+1 and k+2
    local = np.stack(
        [triangles[:, [1, 2]], triangles[:, [2, 0]], triangles[:, [0, 1]]], axis=1
    )
    pairs = np.sort(local.reshape(-1, 2), axis=1)
    edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
    tri_edges = inverse.reshape(-1, 3)

    tangent = vertices[edges[:, 1]] - vertices[edges[:, 0]]
    edge_lengths = np.hypot(tangent[:, 0], tangent[:, 1])
    edge_normals = np.column_stack([tangent[:, 1], -tangent[:, 0]]) / edge_lengths[:, None]
    edge_midpoints = 0.5 * (vertices[edges[:, 0]] + vertices[edges[:, 1]])

    p = vertices[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    areas = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    centroids = p.mean(axis=1)

    outward = edge_midpoints[tri_edges] - centroids[:, None, :]
    tri_edge_signs = np.where(
        np.einsum("fkd,fkd->fk", outward, edge_normals[tri_edges]) > 0, 1, -1
    ).astype(np.int64)

    num_edges = len(edges)
    edge_tris = -np.ones((num_edges, 2), dtype=np.int64)
    counts = np.zeros(num_edges, dtype=np.int64)
    for tri, row in enumerate(tri_edges):
        for e in row:
            edge_tris[e, counts[e]] = tri
            counts[e] += 1
    boundary_edges = counts == 1
    boundary_vertices = np.zeros(len(vertices), dtype=bool)
    boundary_vertices[edges[boundary_edges].ravel()] = True

    return TriMesh(
        n=n,
        vertices=vertices,
        triangles=triangles,
        edges=edges,
        tri_edges=tri_edges,
        tri_edge_signs=tri_edge_signs,
        edge_tris=edge_tris,
        boundary_edges=boundary_edges,
        boundary_vertices=boundary_vertices,
        areas=areas,
        centroids=centroids,
        edge_normals=edge_normals,
        edge_lengths=edge_lengths,
        edge_midpoints=edge_midpoints,
    )
