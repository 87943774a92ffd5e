"""Mesh construction and point-location tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from elastinv.mesh import (BOTTOM, INTERIOR, LEFTRIGHT, TOP,
                           build_uniform_mesh, locate_point, locate_points)


@pytest.fixture(scope="module")
def mesh():
    return build_uniform_mesh(10, 6, 6.8, 2.9)


def test_counts(mesh):
    assert mesh.n_nodes == 11 * 7
    assert mesh.n_triangles == 2 * 10 * 6


def test_node_coordinates(mesh):
    # Node j*(nx+1)+i sits at (i*hx, j*hy).
    i, j = 3, 2
    node = j * 11 + i
    np.testing.assert_allclose(mesh.nodes[node],
                               [3 * 6.8 / 10, 2 * 2.9 / 6])


def test_triangle_areas_sum(mesh):
    v = mesh.nodes[mesh.triangles]
    e1 = v[:, 1] - v[:, 0]
    e2 = v[:, 2] - v[:, 0]
    areas = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    assert np.allclose(areas, mesh.cell_area / 2)
    assert np.isclose(areas.sum(), 6.8 * 2.9)


def test_boundary_tags(mesh):
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    tags = mesh.boundary_tags
    assert np.all(tags[np.isclose(y, 0)] == BOTTOM)
    assert np.all(tags[np.isclose(y, 2.9)] == TOP)
    side = (np.isclose(x, 0) | np.isclose(x, 6.8))
    corner = side & (np.isclose(y, 0) | np.isclose(y, 2.9))
    assert np.all(tags[side & ~corner] == LEFTRIGHT)
    # Corners belong to the top/bottom (Dirichlet) boundary.
    assert np.all((tags[corner] == BOTTOM) | (tags[corner] == TOP))
    interior = ~side & ~np.isclose(y, 0) & ~np.isclose(y, 2.9)
    assert np.all(tags[interior] == INTERIOR)


def test_orientation_counterclockwise(mesh):
    v = mesh.nodes[mesh.triangles]
    e1 = v[:, 1] - v[:, 0]
    e2 = v[:, 2] - v[:, 0]
    cross = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    assert np.all(cross > 0)


def test_locate_centroids(mesh):
    cents = mesh.triangle_centroids()
    for t in (0, 1, 37, mesh.n_triangles - 1):
        hit = locate_point(mesh, cents[t])
        assert hit is not None
        assert hit.triangle_index == t
        np.testing.assert_allclose(hit.weights.sum(), 1.0)


def test_locate_outside(mesh):
    assert locate_point(mesh, (-0.1, 1.0)) is None
    assert locate_point(mesh, (1.0, 3.0)) is None


def test_locate_points_matches_scalar(mesh):
    rng = np.random.default_rng(5)
    pts = rng.uniform([0, 0], [6.8, 2.9], size=(200, 2))
    tri, w, inside = locate_points(mesh, pts)
    assert np.all(inside)
    for k in range(0, 200, 17):
        hit = locate_point(mesh, pts[k])
        assert hit.triangle_index == tri[k]
        np.testing.assert_allclose(hit.weights, w[k], atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 6.8), st.floats(0, 2.9))
def test_barycentric_reconstructs_point(x, y):
    mesh = build_uniform_mesh(10, 6, 6.8, 2.9)
    tri, w, inside = locate_points(mesh, np.array([[x, y]]))
    assert inside[0]
    assert np.all(w[0] >= -1e-9) and np.isclose(w[0].sum(), 1.0)
    rec = w[0] @ mesh.nodes[mesh.triangles[tri[0]]]
    np.testing.assert_allclose(rec, [x, y], atol=1e-9)


def test_validation():
    with pytest.raises(ValueError):
        build_uniform_mesh(0, 6, 6.8, 2.9)
    with pytest.raises(ValueError):
        build_uniform_mesh(10, 6, -1.0, 2.9)
