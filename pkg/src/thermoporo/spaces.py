"""Discrete spaces, degree-of-freedom maps and interpolation operators.

Scalar fields (T, p, the rotation rho) are piecewise constants with indicator
basis functions. Fluxes (r, w) live in the lowest-order Raviart-Thomas space;
the basis function of edge ``e`` restricted to triangle ``K`` is

    phi_e(x) = s_{K,e} / (2 |K|) * (x - P_e)

with ``P_e`` the vertex opposite ``e`` and ``s_{K,e}`` the orientation sign,
so that ``int_e phi_e . n_e ds = 1``.

The stress has two independent rows in the linear Brezzi-Douglas-Marini
space, which pairs stably with piecewise-constant displacement and rotation.
Each row carries two degrees of freedom per edge: the Raviart-Thomas function
above and the divergence-free function

    chi_e = l_a curl l_b + l_b curl l_a,     curl l = (d_y l, -d_x l),

where ``l_a``, ``l_b`` are the barycentric coordinates of the lower and higher
numbered endpoint of ``e``. On ``e`` its normal component is linear with zero
mean, and it has no normal component on the other two edges. A stress row is
stored as ``[RT coefficients (E), chi coefficients (E)]`` and the full stress
as ``[row 0, row 1]``. The displacement has two piecewise-constant components.

Stress rows in the Raviart-Thomas space alone (element ``"rt"``, one degree of
freedom per edge and row) remain available for comparison. With that choice
the equilibrium and symmetry constraints leave only as many free stress
degrees of freedom as there are boundary edges, and the stress does not
converge under refinement.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .mesh import TriMesh

FIELDS = ("T", "r", "p", "w", "sigma", "u", "rho")
STRESS_ELEMENTS = ("bdm", "rt")


# ---------------------------------------------------------------------------
# quadrature on triangles (barycentric points, weights relative to the area)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TriangleRule:
    name: str
    degree: int
    bary: np.ndarray  # (Q, 3)
    weights: np.ndarray  # (Q,), sum to 1


def _perm3(a: float, b: float) -> list[tuple[float, float, float]]:
    return [(a, a, b), (a, b, a), (b, a, a)]


EDGE_MIDPOINT = TriangleRule(
    "edge-midpoint",
    2,
    np.array(_perm3(0.5, 0.0)),
    np.full(3, 1.0 / 3.0),
)

DUNAVANT4 = TriangleRule(
    "dunavant-6",
    4,
    np.array(
        _perm3(0.445948490915965, 1 - 2 * 0.445948490915965)
        + _perm3(0.091576213509771, 1 - 2 * 0.091576213509771)
    ),
    np.array([0.223381589678011] * 3 + [0.109951743655322] * 3),
)


def collapsed_gauss(order: int) -> TriangleRule:
    """Duffy-collapsed tensor Gauss-Legendre rule, exact to total degree 2*order-2."""
    x, w = np.polynomial.legendre.leggauss(order)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    u, v = np.meshgrid(x, x, indexing="ij")
    wu, wv = np.meshgrid(w, w, indexing="ij")
    l1 = u.ravel()
    l2 = (v * (1.0 - u)).ravel()
    bary = np.column_stack([l1, l2, 1.0 - l1 - l2])
    weights = 2.0 * (wu * wv * (1.0 - u)).ravel()
    return TriangleRule(f"collapsed-gauss-{order}", 2 * order - 2, bary, weights)


GAUSS7 = collapsed_gauss(7)

RULES = {"midpoint": EDGE_MIDPOINT, "degree4": DUNAVANT4, "dense": GAUSS7}


def quadrature_points(mesh: TriMesh, rule: TriangleRule) -> tuple[np.ndarray, np.ndarray]:
    """Physical points ``(F, Q, 2)`` and absolute weights ``(F, Q)``."""
    pts = np.einsum("qk,fkd->fqd", rule.bary, mesh.vertices[mesh.triangles])
    wts = mesh.areas[:, None] * rule.weights[None, :]
    return pts, wts


def _evaluate(f: Callable, pts: np.ndarray) -> np.ndarray:
    """Evaluate ``f(x, y)`` on ``(..., 2)`` points, broadcasting constants."""
    val = np.asarray(f(pts[..., 0], pts[..., 1]), dtype=float)
    return val


# ---------------------------------------------------------------------------
# degree-of-freedom layout
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpaceLayout:
    num_triangles: int
    num_edges: int
    counts: dict
    offsets: dict
    total: int

    def slice(self, name: str) -> slice:
        start = self.offsets[name]
        return slice(start, start + self.counts[name])


def stress_row_size(mesh: TriMesh, element: str = "bdm") -> int:
    """Degrees of freedom of one stress row."""
    if element not in STRESS_ELEMENTS:
        raise ValueError(f"stress element must be one of {STRESS_ELEMENTS}")
    return 2 * mesh.num_edges if element == "bdm" else mesh.num_edges


def stress_element_of(mesh: TriMesh, sigma: np.ndarray) -> str:
    """Infer the stress element from the length of a stress coefficient vector."""
    n = len(sigma)
    if n == 4 * mesh.num_edges:
        return "bdm"
    if n == 2 * mesh.num_edges:
        return "rt"
    raise ValueError(f"stress vector of length {n} does not match this mesh")


def build_layout(mesh: TriMesh, stress_element: str = "bdm") -> SpaceLayout:
    F, E = mesh.num_triangles, mesh.num_edges
    S = 2 * stress_row_size(mesh, stress_element)
    counts = {"T": F, "r": E, "p": F, "w": E, "sigma": S, "u": 2 * F, "rho": F}
    offsets = {}
    pos = 0
    for name in FIELDS:
        offsets[name] = pos
        pos += counts[name]
    return SpaceLayout(F, E, counts, offsets, pos)


# ---------------------------------------------------------------------------
# Raviart-Thomas evaluation helpers
# ---------------------------------------------------------------------------


def rt_local_vectors(mesh: TriMesh) -> np.ndarray:
    """``(F, 3, 2)`` array of ``s_{K,e} / (2|K|) * (c_K - P_e)``: basis values at centroids."""
    opposite = mesh.vertices[mesh.triangles]
    coef = mesh.tri_edge_signs / (2.0 * mesh.areas[:, None])
    return coef[:, :, None] * (mesh.centroids[:, None, :] - opposite)


def rt_evaluate(mesh: TriMesh, coeffs: np.ndarray, bary: np.ndarray) -> np.ndarray:
    """Evaluate a flux field at barycentric points ``(Q, 3)`` of every triangle.

    Returns an ``(F, Q, 2)`` array.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    verts = mesh.vertices[mesh.triangles]  # (F, 3, 2)
    pts = np.einsum("qk,fkd->fqd", bary, verts)
    local = coeffs[mesh.tri_edges] * mesh.tri_edge_signs / (2.0 * mesh.areas[:, None])
    # sum_k c_k (x - P_k) = (sum c_k) x - sum c_k P_k
    csum = local.sum(axis=1)
    cp = np.einsum("fk,fkd->fd", local, verts)
    return csum[:, None, None] * pts - cp[:, None, :]


def rt_centroid_values(mesh: TriMesh, coeffs: np.ndarray) -> np.ndarray:
    """Flux field evaluated at triangle centroids, ``(F, 2)``."""
    coeffs = np.asarray(coeffs, dtype=float)
    return np.einsum("fk,fkd->fd", coeffs[mesh.tri_edges], rt_local_vectors(mesh))


def rt_vertex_values(mesh: TriMesh, coeffs: np.ndarray) -> np.ndarray:
    """Flux field at the three vertices of each triangle, ``(F, 3, 2)``."""
    return rt_evaluate(mesh, coeffs, np.eye(3))


def rt_divergence(mesh: TriMesh, coeffs: np.ndarray) -> np.ndarray:
    """Elementwise (constant) divergence of a flux field, ``(F,)``."""
    coeffs = np.asarray(coeffs, dtype=float)
    return (coeffs[mesh.tri_edges] * mesh.tri_edge_signs).sum(axis=1) / mesh.areas


# ---------------------------------------------------------------------------
# projections and interpolation
# ---------------------------------------------------------------------------


def project_P0(mesh: TriMesh, f: Callable, rule: str | TriangleRule = "dense") -> np.ndarray:
    """Cell averages of a scalar function ``f(x, y)``."""
    rule = RULES[rule] if isinstance(rule, str) else rule
    pts, _ = quadrature_points(mesh, rule)
    vals = np.broadcast_to(_evaluate(f, pts), pts.shape[:2])
    return vals @ rule.weights


def project_P0_vector(mesh: TriMesh, f: Callable, rule: str | TriangleRule = "dense") -> np.ndarray:
    """Cell averages of a vector function returning ``(fx, fy)``; blocked ``[x..., y...]``."""
    rule = RULES[rule] if isinstance(rule, str) else rule
    pts, _ = quadrature_points(mesh, rule)
    fx, fy = f(pts[..., 0], pts[..., 1])
    fx = np.broadcast_to(np.asarray(fx, dtype=float), pts.shape[:2])
    fy = np.broadcast_to(np.asarray(fy, dtype=float), pts.shape[:2])
    return np.concatenate([fx @ rule.weights, fy @ rule.weights])


def _edge_normal_samples(mesh: TriMesh, v: Callable, points: int):
    s, w = np.polynomial.legendre.leggauss(points)
    s = 0.5 * (s + 1.0)
    w = 0.5 * w
    a = mesh.vertices[mesh.edges[:, 0]]
    b = mesh.vertices[mesh.edges[:, 1]]
    pts = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
    vx, vy = v(pts[..., 0], pts[..., 1])
    vx = np.broadcast_to(np.asarray(vx, dtype=float), pts.shape[:2])
    vy = np.broadcast_to(np.asarray(vy, dtype=float), pts.shape[:2])
    vn = vx * mesh.edge_normals[:, 0:1] + vy * mesh.edge_normals[:, 1:2]
    return s, w, vn


def interpolate_Hdiv(mesh: TriMesh, v: Callable, points: int = 3) -> np.ndarray:
    """Edge fluxes ``int_e v . n_e ds`` by Gauss-Legendre quadrature on each edge."""
    _, w, vn = _edge_normal_samples(mesh, v, points)
    return mesh.edge_lengths * (vn @ w)


def interpolate_BDM(mesh: TriMesh, v: Callable, points: int = 3) -> np.ndarray:
    """Linear-flux interpolant: the two lowest normal moments on every edge.

    With ``s`` running from the lower to the higher endpoint, the
    coefficient of ``chi_e`` is ``3 int_e v.n (1 - 2s) ds``.
    """
    s, w, vn = _edge_normal_samples(mesh, v, points)
    flux = mesh.edge_lengths * (vn @ w)
    first = 3.0 * mesh.edge_lengths * (vn @ (w * (1.0 - 2.0 * s)))
    return np.concatenate([flux, first])


def interpolate_stress(
    mesh: TriMesh, sigma: Callable, points: int = 3, element: str = "bdm"
) -> np.ndarray:
    """Row-wise interpolant of a tensor function returning ``(s11, s12, s21, s22)``."""
    interp = interpolate_BDM if element == "bdm" else interpolate_Hdiv
    stress_row_size(mesh, element)
    rows = []
    for row in (0, 1):
        def fn(x, y, row=row):
            comps = sigma(x, y)
            return comps[2 * row], comps[2 * row + 1]

        rows.append(interp(mesh, fn, points))
    return np.concatenate(rows)


# ---------------------------------------------------------------------------
# linear (BDM) stress rows
# ---------------------------------------------------------------------------


def bdm_local_dofs(mesh: TriMesh, element: str = "bdm") -> np.ndarray:
    """Row-local indices of the local basis functions on each triangle, ``(F, 6)`` (``(F, 3)`` for rt)."""
    if element == "rt":
        return mesh.tri_edges
    return np.hstack([mesh.tri_edges, mesh.num_edges + mesh.tri_edges])


def barycentric_gradients(mesh: TriMesh) -> np.ndarray:
    """``grad l_k`` on each triangle, ``(F, 3, 2)``."""
    v = mesh.vertices[mesh.triangles]
    # grad l_k = rot(V_{k+1} - V_{k+2}) / (2|K|) with rot(x, y) = (y, -x)
    e = np.roll(v, -1, axis=1) - np.roll(v, -2, axis=1)
    return np.stack([e[..., 1], -e[..., 0]], axis=-1) / (2.0 * mesh.areas[:, None, None])


def bdm_basis_values(mesh: TriMesh, bary: np.ndarray, element: str = "bdm") -> np.ndarray:
    """Values of the local row basis functions at barycentric points, ``(F, Q, 6, 2)``.

    For ``element="rt"`` only the three Raviart-Thomas functions are returned.
    """
    bary = np.asarray(bary, dtype=float)
    F = mesh.num_triangles
    verts = mesh.vertices[mesh.triangles]
    pts = np.einsum("qk,fkd->fqd", bary, verts)
    coef = mesh.tri_edge_signs / (2.0 * mesh.areas[:, None])  # (F, 3)
    rt = coef[:, None, :, None] * (pts[:, :, None, :] - verts[:, None, :, :])
    if element == "rt":
        return rt
    grads = barycentric_gradients(mesh)
    curls = np.stack([grads[..., 1], -grads[..., 0]], axis=-1)  # (F, 3, 2)
    gv = mesh.triangles
    k = np.arange(3)
    i1, i2 = (k + 1) % 3, (k + 2) % 3
    lo_first = gv[:, i1] < gv[:, i2]  # (F, 3)
    a = np.where(lo_first, i1[None, :], i2[None, :])
    b = np.where(lo_first, i2[None, :], i1[None, :])
    rows = np.arange(F)[:, None]
    la = bary[:, a].transpose(1, 0, 2)  # (F, Q, 3)
    lb = bary[:, b].transpose(1, 0, 2)
    chi = la[..., None] * curls[rows, b][:, None] + lb[..., None] * curls[rows, a][:, None]
    return np.concatenate([rt, chi], axis=2)


def bdm_evaluate(mesh: TriMesh, coeffs: np.ndarray, bary: np.ndarray) -> np.ndarray:
    """Evaluate one stress row at barycentric points, ``(F, Q, 2)``.

    ``2E`` coefficients are read as a linear row, ``E`` as a Raviart-Thomas row.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if len(coeffs) == mesh.num_edges:
        return rt_evaluate(mesh, coeffs, bary)
    vals = bdm_basis_values(mesh, bary)
    return np.einsum("fk,fqkd->fqd", coeffs[bdm_local_dofs(mesh)], vals)


def stress_evaluate(mesh: TriMesh, sigma: np.ndarray, bary: np.ndarray) -> np.ndarray:
    """Stress tensor at barycentric points, ``(F, Q, 2, 2)`` (rows first)."""
    half = len(sigma) // 2
    return np.stack(
        [bdm_evaluate(mesh, sigma[:half], bary), bdm_evaluate(mesh, sigma[half:], bary)], axis=-2
    )


def stress_divergence(mesh: TriMesh, sigma: np.ndarray) -> np.ndarray:
    """Row-wise elementwise divergence, blocked ``[row 0 (F), row 1 (F)]``."""
    E = mesh.num_edges
    half = len(sigma) // 2
    return np.concatenate(
        [rt_divergence(mesh, sigma[:E]), rt_divergence(mesh, sigma[half : half + E])]
    )
