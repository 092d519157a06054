import math

import numpy as np
import pytest
from scipy.integrate import dblquad

from thermoporo.mesh import build_structured
from thermoporo.spaces import (
    DUNAVANT4,
    EDGE_MIDPOINT,
    FIELDS,
    GAUSS7,
    bdm_basis_values,
    bdm_evaluate,
    build_layout,
    interpolate_BDM,
    interpolate_Hdiv,
    interpolate_stress,
    project_P0,
    project_P0_vector,
    quadrature_points,
    barycentric_gradients,
    rt_divergence,
    rt_evaluate,
    stress_divergence,
    stress_element_of,
    stress_evaluate,
    stress_row_size,
)

REF = build_structured(1)


def triangle_integral(mesh, k, f):
    """Adaptive-quadrature oracle for ``int_K f`` through the reference map."""
    p0, p1, p2 = mesh.vertices[mesh.triangles[k]]
    jac = 2.0 * mesh.areas[k]

    def g(v, u):
        x, y = p0 + u * (p1 - p0) + v * (p2 - p0)
        return f(x, y)

    val, _ = dblquad(g, 0.0, 1.0, 0.0, lambda u: 1.0 - u, epsabs=1e-14, epsrel=1e-14)
    return jac * val


# -- quadrature ---------------------------------------------------------------


@pytest.mark.parametrize("rule", [EDGE_MIDPOINT, DUNAVANT4, GAUSS7])
def test_rules_integrate_monomials(rule):
    """``int_ref x^a y^b = a! b! / (a+b+2)!`` on the unit right triangle."""
    l1, l2 = rule.bary[:, 1], rule.bary[:, 2]
    for a in range(rule.degree + 1):
        for b in range(rule.degree + 1 - a):
            exact = math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
            approx = 0.5 * np.dot(rule.weights, l1**a * l2**b)
            assert approx == pytest.approx(exact, rel=1e-12, abs=1e-15), (a, b)


def test_quadrature_points_weights_sum_to_area():
    mesh = build_structured(3)
    _, wts = quadrature_points(mesh, GAUSS7)
    np.testing.assert_allclose(wts.sum(axis=1), mesh.areas, rtol=1e-14)


# -- layout ---------------------------------------------------------------------


def test_layout_rt_rows_counts():
    lay = build_layout(REF, "rt")
    assert lay.counts == {"T": 2, "r": 5, "p": 2, "w": 5, "sigma": 10, "u": 4, "rho": 2}
    assert lay.total == 30


@pytest.mark.parametrize("n, rt_total, bdm_total", [(1, 30, 40), (2, 104, 136), (4, 384, 496)])
def test_layout_totals(n, rt_total, bdm_total):
    mesh = build_structured(n)
    F, E = mesh.num_triangles, mesh.num_edges
    assert build_layout(mesh, "rt").total == rt_total == 5 * F + 4 * E
    assert build_layout(mesh).total == bdm_total == 5 * F + 6 * E


def test_layout_offsets_contiguous():
    lay = build_layout(build_structured(2))
    pos = 0
    for name in FIELDS:
        assert lay.offsets[name] == pos
        assert lay.slice(name) == slice(pos, pos + lay.counts[name])
        pos += lay.counts[name]
    assert pos == lay.total


def test_stress_element_validation():
    mesh = build_structured(2)
    assert stress_row_size(mesh, "rt") == mesh.num_edges
    assert stress_row_size(mesh) == 2 * mesh.num_edges
    with pytest.raises(ValueError):
        stress_row_size(mesh, "p2")
    assert stress_element_of(mesh, np.zeros(4 * mesh.num_edges)) == "bdm"
    assert stress_element_of(mesh, np.zeros(2 * mesh.num_edges)) == "rt"
    with pytest.raises(ValueError):
        stress_element_of(mesh, np.zeros(3))


# -- projection -------------------------------------------------------------


def test_project_constant_and_linear():
    mesh = build_structured(3)
    np.testing.assert_allclose(project_P0(mesh, lambda x, y: 2.5), 2.5, atol=1e-14)
    lin = lambda x, y: 1.0 + 2.0 * x - 3.0 * y  # noqa: E731
    c = mesh.centroids
    np.testing.assert_allclose(project_P0(mesh, lin), lin(c[:, 0], c[:, 1]), atol=1e-14)
    np.testing.assert_allclose(project_P0(mesh, lin, rule="midpoint"), lin(c[:, 0], c[:, 1]), atol=1e-14)


def test_project_sine_matches_adaptive_oracle():
    mesh = build_structured(4)
    f = lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)  # noqa: E731
    got = project_P0(mesh, f)
    want = np.array([triangle_integral(mesh, k, f) for k in range(mesh.num_triangles)]) / mesh.areas
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-14)


def test_project_vector_blocks():
    mesh = build_structured(2)
    v = project_P0_vector(mesh, lambda x, y: (x, 2 * y))
    c = mesh.centroids
    np.testing.assert_allclose(v, np.concatenate([c[:, 0], 2 * c[:, 1]]), atol=1e-14)


# -- Raviart-Thomas interpolation -----------------------------------------------------


def test_interpolate_constant_field():
    mesh = build_structured(3)
    dofs = interpolate_Hdiv(mesh, lambda x, y: (np.ones_like(x), np.zeros_like(x)))
    np.testing.assert_allclose(dofs, mesh.edge_normals[:, 0] * mesh.edge_lengths, atol=1e-15)
    np.testing.assert_array_equal(interpolate_Hdiv(mesh, lambda x, y: (0 * x, 0 * y)), 0.0)


def test_interpolate_position_field():
    """On a straight edge ``x . n`` is constant, so the flux is ``(m . n)|e|``."""
    mesh = build_structured(3)
    dofs = interpolate_Hdiv(mesh, lambda x, y: (x, y))
    want = np.einsum("ed,ed->e", mesh.edge_midpoints, mesh.edge_normals) * mesh.edge_lengths
    np.testing.assert_allclose(dofs, want, atol=1e-15)


def test_rt_reproduces_its_own_fields(rng):
    """Fields ``a + b x`` lie in the flux space and survive interpolation and evaluation."""
    mesh = build_structured(3)
    a, b = rng.standard_normal(2), rng.standard_normal()
    v = lambda x, y: (a[0] + b * x, a[1] + b * y)  # noqa: E731
    vals = rt_evaluate(mesh, interpolate_Hdiv(mesh, v), GAUSS7.bary)
    pts, _ = quadrature_points(mesh, GAUSS7)
    ex = np.stack(v(pts[..., 0], pts[..., 1]), axis=-1)
    np.testing.assert_allclose(vals, ex, atol=1e-13)
    np.testing.assert_allclose(rt_divergence(mesh, interpolate_Hdiv(mesh, v)), 2 * b, atol=1e-12)


def test_rt_commuting_projection():
    """``div`` of the flux interpolant equals the cell average of ``div v``."""
    mesh = build_structured(4)
    v = lambda x, y: (x**2 * y, np.sin(x) + y**3)  # noqa: E731
    div = lambda x, y: 2 * x * y + 3 * y**2  # noqa: E731
    got = rt_divergence(mesh, interpolate_Hdiv(mesh, v, points=4))
    np.testing.assert_allclose(got, project_P0(mesh, div), atol=1e-12)


def test_rt_basis_unit_flux():
    mesh = build_structured(2)
    for e in range(mesh.num_edges):
        coeffs = np.zeros(mesh.num_edges)
        coeffs[e] = 1.0
        for tri, sign in mesh.adjacency(e):
            k = int(np.flatnonzero(mesh.tri_edges[tri] == e)[0])
            # Gauss points on local edge k (barycentric coordinate k is zero)
            s = np.array([0.5 - 0.5 / math.sqrt(3), 0.5 + 0.5 / math.sqrt(3)])
            bary = np.zeros((2, 3))
            bary[:, (k + 1) % 3], bary[:, (k + 2) % 3] = s, 1 - s
            vals = rt_evaluate(mesh, coeffs, bary)[tri]
            flux = (vals @ mesh.edge_normals[e]).mean() * mesh.edge_lengths[e]
            assert flux == pytest.approx(1.0, abs=1e-13)


# -- linear stress rows ----------------------------------------------------------


def test_bdm_reproduces_linear_fields(rng):
    mesh = build_structured(3)
    A = rng.standard_normal((2, 3))
    v = lambda x, y: (A[0, 0] + A[0, 1] * x + A[0, 2] * y, A[1, 0] + A[1, 1] * x + A[1, 2] * y)  # noqa: E731
    vals = bdm_evaluate(mesh, interpolate_BDM(mesh, v), GAUSS7.bary)
    pts, _ = quadrature_points(mesh, GAUSS7)
    np.testing.assert_allclose(vals, np.stack(v(pts[..., 0], pts[..., 1]), axis=-1), atol=1e-13)


def test_bdm_extra_coefficients_vanish_on_rt_fields():
    mesh = build_structured(3)
    coeffs = interpolate_BDM(mesh, lambda x, y: (1 + 2 * x, -3 + 2 * y))
    assert np.abs(coeffs[mesh.num_edges :]).max() < 1e-13


def test_chi_functions_are_divergence_free_with_edge_local_normal_trace():
    mesh = build_structured(2)
    F = mesh.num_triangles
    h = 1e-6
    centre = np.array([[1 / 3, 1 / 3, 1 / 3]])
    # divergence by central differences in barycentric coordinates
    grads = barycentric_gradients(mesh)
    div = np.zeros((F, 3))
    for k in range(3):
        step = np.zeros((1, 3))
        step[0, k] = h
        vp = bdm_basis_values(mesh, centre + step)[:, 0, 3:]
        vm = bdm_basis_values(mesh, centre - step)[:, 0, 3:]
        # d/dl_k of each component, chained with grad l_k
        div += np.einsum("fjd,fd->fj", (vp - vm) / (2 * h), grads[:, k])
    assert np.abs(div).max() < 1e-6
    s = np.linspace(0.0, 1.0, 7)
    for k in range(3):
        bary = np.zeros((7, 3))
        bary[:, (k + 1) % 3], bary[:, (k + 2) % 3] = s, 1 - s
        vals = bdm_basis_values(mesh, bary)  # (F, 7, 6, 2)
        normals = mesh.edge_normals[mesh.tri_edges[:, k]]
        vn = np.einsum("fqjd,fd->fqj", vals, normals)
        for j in range(3):
            if j != k:
                assert np.abs(vn[:, :, 3 + j]).max() < 1e-12
        own = vn[:, :, 3 + k]
        assert np.abs(own.mean(axis=1)).max() < 1e-12
        assert np.abs(own).max() > 0.1
        np.testing.assert_allclose(np.diff(own, 2, axis=1), 0.0, atol=1e-11)


def test_stress_interpolation_and_divergence(rng):
    mesh = build_structured(3)
    C = rng.standard_normal((4, 3))

    def sigma(x, y):
        return tuple(c[0] + c[1] * x + c[2] * y for c in C)

    coeffs = interpolate_stress(mesh, sigma)
    assert len(coeffs) == 4 * mesh.num_edges
    vals = stress_evaluate(mesh, coeffs, DUNAVANT4.bary)
    pts, _ = quadrature_points(mesh, DUNAVANT4)
    ex = np.stack(sigma(pts[..., 0], pts[..., 1]), axis=-1).reshape(*pts.shape[:2], 2, 2)
    np.testing.assert_allclose(vals, ex, atol=1e-12)
    div = stress_divergence(mesh, coeffs)
    F = mesh.num_triangles
    np.testing.assert_allclose(div[:F], C[0, 1] + C[1, 2], atol=1e-12)
    np.testing.assert_allclose(div[F:], C[2, 1] + C[3, 2], atol=1e-12)


def test_stress_rt_rows_round_trip():
    mesh = build_structured(2)
    # each row has the Raviart-Thomas form a + b x
    sigma = lambda x, y: (1 + x, 2.0 + x * 0 + y, -1.0 + 2 * x, 3 + 2 * y)  # noqa: E731
    coeffs = interpolate_stress(mesh, sigma, element="rt")
    assert len(coeffs) == 2 * mesh.num_edges
    vals = stress_evaluate(mesh, coeffs, EDGE_MIDPOINT.bary)
    pts, _ = quadrature_points(mesh, EDGE_MIDPOINT)
    ex = np.stack(sigma(pts[..., 0], pts[..., 1]), axis=-1).reshape(*pts.shape[:2], 2, 2)
    np.testing.assert_allclose(vals, ex, atol=1e-13)
