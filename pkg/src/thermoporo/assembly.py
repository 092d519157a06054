"""Sparse block operators of the semi-discrete system ``Phi X' + Psi X = L``.

Unknowns are ordered ``(p, sigma, T, w, u, r, rho)``. The rotation multiplier
``rho`` enforces stress symmetry weakly and is appended after the six
physical fields. All element integrals are exact closed forms on affine
triangles (stress products are quadratic and integrated by the edge-midpoint
rule, which is exact for them); the only approximate quadrature is in the
load vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from . import kernels
from .mesh import TriMesh
from .params import MaterialParams, check_constraints, derived_coeffs
from .spaces import (
    DUNAVANT4,
    EDGE_MIDPOINT,
    TriangleRule,
    bdm_basis_values,
    bdm_local_dofs,
    quadrature_points,
    rt_centroid_values,
    stress_row_size,
)

DAE_ORDER = ("p", "sigma", "T", "w", "u", "r", "rho")


def dae_counts(mesh: TriMesh, stress_element: str = "bdm") -> dict:
    F, E = mesh.num_triangles, mesh.num_edges
    S = 2 * stress_row_size(mesh, stress_element)
    return {"p": F, "sigma": S, "T": F, "w": E, "u": 2 * F, "r": E, "rho": F}


def dae_offsets(mesh: TriMesh, stress_element: str = "bdm") -> dict:
    offsets, pos = {}, 0
    for name, n in dae_counts(mesh, stress_element).items():
        offsets[name] = pos
        pos += n
    return offsets


# ---------------------------------------------------------------------------
# elementary operators
# ---------------------------------------------------------------------------


def assemble_mass_P0(mesh: TriMesh, weight: float) -> sp.csr_matrix:
    if not weight > 0:
        raise ValueError("P0 mass weight must be positive")
    return sp.diags(weight * mesh.areas, format="csr")


def _scatter_edges(mesh: TriMesh, local: np.ndarray) -> sp.csr_matrix:
    rows = np.repeat(mesh.tri_edges, 3, axis=1).ravel()
    cols = np.tile(mesh.tri_edges, (1, 3)).ravel()
    E = mesh.num_edges
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(E, E))


def assemble_mass_Hdiv(mesh: TriMesh, M) -> sp.csr_matrix:
    """``(M phi_i, phi_j)`` over the Raviart-Thomas basis for a constant 2x2 ``M``."""
    M = np.asarray(M, dtype=float)
    if M.shape != (2, 2):
        raise ValueError("M must be 2x2")
    if abs(np.linalg.det(M)) < 1e-300:
        raise ValueError("M is singular")
    local = kernels.rt_mass_local(mesh.vertices[mesh.triangles], mesh.areas, mesh.tri_edge_signs, M)
    return _scatter_edges(mesh, local)


def assemble_div(mesh: TriMesh) -> sp.csr_matrix:
    """``(div phi_e, 1_K)``: an ``(E, F)`` matrix with entries in {+1, -1}."""
    F = mesh.num_triangles
    rows = mesh.tri_edges.ravel()
    cols = np.repeat(np.arange(F), 3)
    return sp.csr_matrix(
        (mesh.tri_edge_signs.ravel().astype(float), (rows, cols)), shape=(mesh.num_edges, F)
    )


def _edge_moments(mesh: TriMesh) -> np.ndarray:
    """``int_K phi_e dx`` for each triangle and local edge, ``(F, 3, 2)``."""
    signs = mesh.tri_edge_signs[:, :, None]
    opposite = mesh.vertices[mesh.triangles]
    return 0.5 * signs * (mesh.centroids[:, None, :] - opposite)


def _tri_by_edge(mesh: TriMesh, values: np.ndarray) -> sp.csr_matrix:
    F = mesh.num_triangles
    rows = np.repeat(np.arange(F), 3)
    cols = mesh.tri_edges.ravel()
    return sp.csr_matrix((values.ravel(), (rows, cols)), shape=(F, mesh.num_edges))


def _stress_moments(mesh: TriMesh, element: str = "bdm") -> np.ndarray:
    """``int_K psi_k dx`` for the local stress-row basis functions, ``(F, 6 or 3, 2)``."""
    vals = bdm_basis_values(mesh, EDGE_MIDPOINT.bary, element)
    return mesh.areas[:, None, None] * np.einsum("q,fqkd->fkd", EDGE_MIDPOINT.weights, vals)


def _tri_by_row_dofs(mesh: TriMesh, values: np.ndarray, element: str = "bdm") -> sp.csr_matrix:
    F = mesh.num_triangles
    dofs = bdm_local_dofs(mesh, element)
    rows = np.repeat(np.arange(F), dofs.shape[1])
    shape = (F, stress_row_size(mesh, element))
    return sp.csr_matrix((values.ravel(), (rows, dofs.ravel())), shape=shape)


def trace_pairing(mesh: TriMesh, element: str = "bdm") -> sp.csr_matrix:
    """``(q I, tau)`` for P0 scalars against the row-wise stress basis, ``(F, 2 x row size)``."""
    mom = _stress_moments(mesh, element)
    return sp.hstack(
        [_tri_by_row_dofs(mesh, mom[..., 0], element), _tri_by_row_dofs(mesh, mom[..., 1], element)]
    ).tocsr()


def assemble_coupling_traces(mesh: TriMesh, params: MaterialParams, element: str = "bdm") -> dict:
    """Blocks ``A_psigma``, ``A_Tsigma`` (``F`` rows, one column per stress dof) and ``A_Tp``."""
    d = derived_coeffs(params)
    tp = trace_pairing(mesh, element)
    return {
        "A_psigma": (params.p_trace_weight * tp).tocsr(),
        "A_Tsigma": (params.T_trace_weight * tp).tocsr(),
        "A_Tp": sp.diags(-d.b_r * mesh.areas, format="csr"),
    }


def assemble_weak_symmetry(mesh: TriMesh, element: str = "bdm") -> sp.csr_matrix:
    """``(xi, sigma_12 - sigma_21)`` for P0 rotations."""
    mom = _stress_moments(mesh, element)
    # row 0 carries sigma_11, sigma_12; row 1 carries sigma_21, sigma_22
    return sp.hstack(
        [_tri_by_row_dofs(mesh, mom[..., 1], element), _tri_by_row_dofs(mesh, -mom[..., 0], element)]
    ).tocsr()


def assemble_row_div(mesh: TriMesh, element: str = "bdm") -> sp.csr_matrix:
    """``(div tau_row, v)`` for one stress row against P0; the chi part is divergence free."""
    div = assemble_div(mesh)
    if element == "rt":
        return div.T.tocsr()
    return sp.hstack([div.T, sp.csr_matrix((mesh.num_triangles, mesh.num_edges))]).tocsr()


def assemble_stress_mass(mesh: TriMesh, M, element: str = "bdm") -> sp.csr_matrix:
    """``(M psi_i, psi_j)`` over one stress row's basis for a constant 2x2 ``M``."""
    M = np.asarray(M, dtype=float)
    vals = bdm_basis_values(mesh, EDGE_MIDPOINT.bary, element)
    w = EDGE_MIDPOINT.weights
    local = mesh.areas[:, None, None] * np.einsum("q,fqia,ab,fqjb->fij", w, vals, M, vals)
    dofs = bdm_local_dofs(mesh, element)
    k = dofs.shape[1]
    rows = np.repeat(dofs, k, axis=1).ravel()
    cols = np.tile(dofs, (1, k)).ravel()
    n = stress_row_size(mesh, element)
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def assemble_stress_compliance(mesh: TriMesh, params: MaterialParams, element: str = "bdm") -> sp.csr_matrix:
    """``(A tau_i, tau_j)`` over the row-wise stress basis."""
    shift = params.lam / (2.0 * (params.mu + params.lam))
    ident = assemble_stress_mass(mesh, np.eye(2), element)
    blocks = [[None, None], [None, None]]
    for a in range(2):
        for b in range(2):
            unit = np.zeros((2, 2))
            unit[a, b] = 1.0
            blk = -shift * assemble_stress_mass(mesh, unit, element)
            if a == b:
                blk = blk + ident
            blocks[a][b] = blk / (2.0 * params.mu)
    return sp.bmat(blocks, format="csr")


def convective_eta(mesh: TriMesh, r_frozen: np.ndarray, params: MaterialParams) -> np.ndarray:
    """Elementwise-constant ``Theta^{-1} r`` at centroids, ``(F, 2)``."""
    return rt_centroid_values(mesh, r_frozen) @ params.Theta_inv.T


def assemble_convective_eta(mesh: TriMesh, eta: np.ndarray) -> tuple[sp.csr_matrix, float]:
    """``(eta . phi_e, 1_K)`` as an ``(E, F)`` block plus ``max_K |eta_K|``."""
    eta = np.asarray(eta, dtype=float)
    if eta.shape == (2,):
        eta = np.broadcast_to(eta, (mesh.num_triangles, 2))
    local = kernels.convective_local(_edge_moments(mesh), eta)
    block = _tri_by_edge(mesh, local).T.tocsr()
    gamma = float(np.sqrt((eta**2).sum(axis=1)).max()) if len(eta) else 0.0
    return block, gamma


def assemble_convective(
    mesh: TriMesh, r_frozen: np.ndarray, params: MaterialParams
) -> tuple[sp.csr_matrix, float]:
    return assemble_convective_eta(mesh, convective_eta(mesh, r_frozen, params))


# ---------------------------------------------------------------------------
# loads
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Sources:
    """Body force ``f(x, y, t) -> (fx, fy)``, mass source ``g`` and heat source ``h``.

    Any entry left as ``None`` is identically zero.
    """

    f: Optional[Callable] = None
    g: Optional[Callable] = None
    h: Optional[Callable] = None

    @staticmethod
    def zero() -> "Sources":
        return Sources()

    def scaled(self, c: float) -> "Sources":
        def sc(fn, vector=False):
            if fn is None:
                return None
            if vector:
                return lambda x, y, t: tuple(c * np.asarray(v) for v in fn(x, y, t))
            return lambda x, y, t: c * np.asarray(fn(x, y, t))

        return Sources(sc(self.f, True), sc(self.g), sc(self.h))


def _integrate_scalar(mesh, fn, t, rule) -> np.ndarray:
    if fn is None:
        return np.zeros(mesh.num_triangles)
    pts, wts = quadrature_points(mesh, rule)
    vals = np.broadcast_to(np.asarray(fn(pts[..., 0], pts[..., 1], t), dtype=float), wts.shape)
    return (vals * wts).sum(axis=1)


def assemble_loads(
    mesh: TriMesh, sources: Optional[Sources], t: float, rule: TriangleRule = DUNAVANT4
) -> dict:
    """Load vectors ``L1 = (f, v)``, ``L2 = (g, q)``, ``L3 = (h, S)``."""
    sources = sources or Sources()
    F = mesh.num_triangles
    if sources.f is None:
        L1 = np.zeros(2 * F)
    else:
        pts, wts = quadrature_points(mesh, rule)
        fx, fy = sources.f(pts[..., 0], pts[..., 1], t)
        fx = np.broadcast_to(np.asarray(fx, dtype=float), wts.shape)
        fy = np.broadcast_to(np.asarray(fy, dtype=float), wts.shape)
        L1 = np.concatenate([(fx * wts).sum(axis=1), (fy * wts).sum(axis=1)])
    return {
        "L1": L1,
        "L2": _integrate_scalar(mesh, sources.g, t, rule),
        "L3": _integrate_scalar(mesh, sources.h, t, rule),
    }


# ---------------------------------------------------------------------------
# block system
# ---------------------------------------------------------------------------


@dataclass
class BlockSystem:
    mesh: TriMesh
    params: MaterialParams
    blocks: dict
    Phi: sp.csr_matrix
    Psi: sp.csr_matrix
    L: np.ndarray
    offsets: dict = field(default_factory=dict)
    gamma: float = 0.0

    @property
    def dim(self) -> int:
        return self.Phi.shape[0]

    def slice(self, name: str) -> slice:
        start = self.offsets[name]
        ends = sorted(list(self.offsets.values()) + [self.dim])
        return slice(start, ends[ends.index(start) + 1])

    def pencil(self, s: float) -> sp.csc_matrix:
        return (s * self.Phi + self.Psi).tocsc()

    def dump(self, path: str | Path, which: str = "Psi") -> None:
        """Write ``Phi`` or ``Psi`` as ``row col value`` lines."""
        mat = getattr(self, which).tocoo()
        with Path(path).open("w", encoding="utf-8") as fh:
            fh.write(f"# {which} {mat.shape[0]} {mat.shape[1]} nnz={mat.nnz}\n")
            for i, j, v in zip(mat.row, mat.col, mat.data):
                fh.write(f"{i} {j} {v:.17g}\n")


class SystemAssembler:
    """Caches the static blocks of one mesh/parameter pair.

    Only the convective block and the loads depend on the Picard iterate and
    time, so repeated assembly inside the time loop reuses everything else.
    """

    def __init__(
        self, mesh: TriMesh, params: MaterialParams, warn: bool = True, stress_element: str = "bdm"
    ):
        self.mesh = mesh
        self.params = params
        self.stress_element = stress_element
        se = stress_element
        stress_row_size(mesh, se)
        self.constraints = check_constraints(params, warn=warn)
        d = derived_coeffs(params)
        self.coeffs = d
        mass = sp.diags(mesh.areas, format="csr")
        div = assemble_div(mesh)
        row_div = assemble_row_div(mesh, se)
        traces = assemble_coupling_traces(mesh, params, se)
        self.blocks = {
            "A_pp": (params.c0 + d.c_r) * mass,
            "A_TT": (params.a0 + d.a_r) * mass,
            "A_Tp": traces["A_Tp"],
            "A_sigmasigma": assemble_stress_compliance(mesh, params, se),
            "A_ww": assemble_mass_Hdiv(mesh, params.K_inv),
            "A_rr": assemble_mass_Hdiv(mesh, params.Theta_inv),
            "A_usigma": sp.block_diag([row_div, row_div], format="csr"),
            "A_psigma": traces["A_psigma"],
            "A_Tsigma": traces["A_Tsigma"],
            "A_wp": div,
            "A_rT": div.copy(),
            "A_rhosigma": assemble_weak_symmetry(mesh, se),
        }
        self.mass0 = mass
        self.rt_mass = assemble_mass_Hdiv(mesh, np.eye(2))
        self.stress_mass = sp.block_diag([assemble_stress_mass(mesh, np.eye(2), se)] * 2, format="csr")
        self.offsets = dae_offsets(mesh, se)
        self.counts = dae_counts(mesh, se)
        self.dim = sum(self.counts.values())
        self.Phi = self._phi()
        self.Psi0 = self._psi(None)

    def slice(self, name: str) -> slice:
        start = self.offsets[name]
        return slice(start, start + self.counts[name])

    def _grid(self):
        return {a: {b: None for b in DAE_ORDER} for a in DAE_ORDER}

    def _bmat(self, grid) -> sp.csr_matrix:
        rows = []
        for a in DAE_ORDER:
            row = []
            for b in DAE_ORDER:
                blk = grid[a][b]
                if blk is None and a == b:
                    n = self.counts[a]
                    blk = sp.csr_matrix((n, n))
                row.append(blk)
            rows.append(row)
        return sp.bmat(rows, format="csr")

    def _phi(self) -> sp.csr_matrix:
        B = self.blocks
        g = self._grid()
        g["p"]["p"] = B["A_pp"]
        g["p"]["sigma"] = B["A_psigma"]
        g["p"]["T"] = B["A_Tp"].T
        g["T"]["p"] = B["A_Tp"]
        g["T"]["sigma"] = B["A_Tsigma"]
        g["T"]["T"] = B["A_TT"]
        return self._bmat(g)

    def _psi(self, A_wT) -> sp.csr_matrix:
        B = self.blocks
        g = self._grid()
        g["p"]["w"] = B["A_wp"].T
        g["sigma"]["p"] = B["A_psigma"].T
        g["sigma"]["sigma"] = B["A_sigmasigma"]
        g["sigma"]["T"] = B["A_Tsigma"].T
        g["sigma"]["u"] = B["A_usigma"].T
        g["sigma"]["rho"] = B["A_rhosigma"].T
        g["T"]["r"] = B["A_rT"].T
        if A_wT is not None:
            g["T"]["w"] = -A_wT.T
        g["w"]["p"] = -B["A_wp"]
        g["w"]["w"] = B["A_ww"]
        g["u"]["sigma"] = -B["A_usigma"]
        g["r"]["T"] = -B["A_rT"]
        g["r"]["r"] = B["A_rr"]
        g["rho"]["sigma"] = -B["A_rhosigma"]
        return self._bmat(g)

    def convective_matrix(self, A_wT: sp.csr_matrix) -> sp.csr_matrix:
        """Embed ``-A_wT^T`` at the (T, w) position of a full-size matrix."""
        coo = A_wT.T.tocoo()
        rows = coo.row + self.offsets["T"]
        cols = coo.col + self.offsets["w"]
        return sp.csr_matrix((-coo.data, (rows, cols)), shape=(self.dim, self.dim))

    def load(self, sources: Optional[Sources], t: float) -> np.ndarray:
        loads = assemble_loads(self.mesh, sources, t)
        L = np.zeros(self.dim)
        L[self.offsets["p"] : self.offsets["p"] + self.counts["p"]] = loads["L2"]
        L[self.offsets["T"] : self.offsets["T"] + self.counts["T"]] = loads["L3"]
        L[self.offsets["u"] : self.offsets["u"] + self.counts["u"]] = loads["L1"]
        return L

    def system(
        self,
        r_frozen: Optional[np.ndarray] = None,
        sources: Optional[Sources] = None,
        t: float = 0.0,
        eta: Optional[np.ndarray] = None,
    ) -> BlockSystem:
        if eta is None:
            if r_frozen is None:
                r_frozen = np.zeros(self.mesh.num_edges)
            A_wT, gamma = assemble_convective(self.mesh, r_frozen, self.params)
        else:
            A_wT, gamma = assemble_convective_eta(self.mesh, eta)
        blocks = dict(self.blocks, A_wT=A_wT)
        Psi = (self.Psi0 + self.convective_matrix(A_wT)).tocsr()
        return BlockSystem(
            mesh=self.mesh,
            params=self.params,
            blocks=blocks,
            Phi=self.Phi,
            Psi=Psi,
            L=self.load(sources, t),
            offsets=dict(self.offsets),
            gamma=gamma,
        )


def assemble_system(
    mesh: TriMesh,
    params: MaterialParams,
    r_frozen: Optional[np.ndarray] = None,
    sources: Optional[Sources] = None,
    t: float = 0.0,
    eta: Optional[np.ndarray] = None,
    stress_element: str = "bdm",
) -> BlockSystem:
    """Assemble ``Phi``, ``Psi`` and ``L`` at time ``t``.

    A violated coefficient constraint produces a warning; assembly proceeds.
    """
    if r_frozen is not None and len(r_frozen) != mesh.num_edges:
        raise ValueError(
            f"frozen flux has {len(r_frozen)} entries, mesh has {mesh.num_edges} edges"
        )
    if eta is not None and np.shape(eta) not in ((2,), (mesh.num_triangles, 2)):
        raise ValueError("eta must be a constant 2-vector or one vector per triangle")
    return SystemAssembler(mesh, params, stress_element=stress_element).system(r_frozen, sources, t, eta)
