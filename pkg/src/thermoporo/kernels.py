"""Vectorised element kernels shared by the assembly routines."""

import numpy as np


def rt_mass_local(verts, areas, signs, M):
    """Local Raviart-Thomas matrices ``int_K phi_i . M phi_j`` for all triangles.

    Uses ``int_K l_k l_l = |K| (1 + delta_kl) / 12`` on the affine map, so the
    result is exact for any constant (not necessarily symmetric) ``M``.
    """
    verts = np.asarray(verts, dtype=float)
    M = np.asarray(M, dtype=float)
    # d[f, i, k] = V_k - P_i
    d = verts[:, None, :, :] - verts[:, :, None, :]
    dsum = d.sum(axis=2)
    Md = np.einsum("ab,fkb->fka", M, dsum)
    term = np.einsum("fia,fja->fij", dsum, Md)
    term += np.einsum("fika,ab,fjkb->fij", d, M, d)
    s = np.asarray(signs, dtype=float)
    return term * (s[:, :, None] * s[:, None, :]) / (48.0 * np.asarray(areas)[:, None, None])


def convective_local(moments, eta):
    """``eta_K . int_K phi_e`` for each triangle and local edge, ``(F, 3)``."""
    return np.einsum("fkd,fd->fk", moments, eta)
