import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thermoporo.mesh import build_structured


@pytest.mark.parametrize("n, V, F, E", [(1, 4, 2, 5), (2, 9, 8, 16), (4, 25, 32, 56)])
def test_counts(n, V, F, E):
    mesh = build_structured(n)
    assert (mesh.num_vertices, mesh.num_triangles, mesh.num_edges) == (V, F, E)
    assert mesh.euler_characteristic() == 1


@given(st.integers(min_value=1, max_value=12))
@settings(max_examples=12, deadline=None)
def test_count_formulas(n):
    mesh = build_structured(n)
    assert mesh.num_vertices == (n + 1) ** 2
    assert mesh.num_triangles == 2 * n * n
    assert mesh.num_edges == 2 * n * (n + 1) + n * n


@pytest.mark.parametrize("n", [0, -1, 1.5])
def test_rejects_bad_subdivision(n):
    with pytest.raises(ValueError):
        build_structured(n)


def test_handshake_count():
    mesh = build_structured(2)
    total = sum(len(mesh.adjacency(e)) for e in range(mesh.num_edges))
    assert total == 3 * mesh.num_triangles == 24


@pytest.mark.parametrize("n", [1, 3, 5])
def test_areas_and_orientation(n):
    mesh = build_structured(n)
    np.testing.assert_allclose(mesh.areas, 1.0 / (2 * n * n), rtol=0, atol=1e-15)
    assert abs(mesh.areas.sum() - 1.0) < 1e-14
    p = mesh.vertices[mesh.triangles]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    signed = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    assert np.all(signed > 0)


def test_local_edge_is_opposite_local_vertex():
    mesh = build_structured(3)
    for f, tri in enumerate(mesh.triangles):
        for k in range(3):
            edge = set(mesh.edges[mesh.tri_edges[f, k]])
            assert edge == {tri[(k + 1) % 3], tri[(k + 2) % 3]}


def test_edge_normals_are_clockwise_rotated_tangents():
    mesh = build_structured(3)
    t = mesh.vertices[mesh.edges[:, 1]] - mesh.vertices[mesh.edges[:, 0]]
    expected = np.column_stack([t[:, 1], -t[:, 0]]) / np.linalg.norm(t, axis=1)[:, None]
    np.testing.assert_allclose(mesh.edge_normals, expected, atol=1e-15)
    assert np.all(mesh.edges[:, 0] < mesh.edges[:, 1])


def test_signs_mark_outward_normals():
    mesh = build_structured(3)
    out = mesh.edge_midpoints[mesh.tri_edges] - mesh.centroids[:, None, :]
    dots = np.einsum("fkd,fkd->fk", out, mesh.edge_normals[mesh.tri_edges])
    assert np.all(np.sign(dots) == mesh.tri_edge_signs)
    # closed boundary: sum of outward normal times length vanishes on every triangle
    flux = (mesh.tri_edge_signs[..., None] * mesh.edge_normals[mesh.tri_edges]
            * mesh.edge_lengths[mesh.tri_edges][..., None]).sum(axis=1)
    assert np.abs(flux).max() < 1e-14


def test_adjacency_boundary_and_interior():
    mesh = build_structured(4)
    for e in range(mesh.num_edges):
        adj = mesh.adjacency(e)
        if mesh.boundary_edges[e]:
            assert len(adj) == 1
        else:
            assert len(adj) == 2
            assert adj[0][1] == -adj[1][1]
    # boundary edges lie on the boundary of the square
    mid = mesh.edge_midpoints[mesh.boundary_edges]
    on_side = np.isclose(mid, 0) | np.isclose(mid, 1)
    assert np.all(on_side.any(axis=1))
    assert mesh.boundary_edges.sum() == 4 * 4


def test_adjacency_out_of_range():
    mesh = build_structured(1)
    with pytest.raises(IndexError):
        mesh.adjacency(5)
    with pytest.raises(IndexError):
        mesh.adjacency(-1)


def test_dump_roundtrip(tmp_path):
    mesh = build_structured(2)
    path = tmp_path / "mesh.txt"
    mesh.dump(path)
    lines = path.read_text().splitlines()
    assert lines[1] == "vertices 9"
    vrows = [list(map(float, l.split()[1:3])) for l in lines[2:11]]
    np.testing.assert_array_equal(np.array(vrows), mesh.vertices)
    assert "triangles 8" in lines and "edges 16" in lines
