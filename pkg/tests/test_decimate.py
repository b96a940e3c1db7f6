import numpy as np
import pytest

from furgroom.decimate import (decimate, largest_component, remove_degenerate_faces, repair,
                               resample_faces, subdivide_midpoint, weld_vertices)
from furgroom.mesh import MeshError, TriMesh, unsigned_distance
from furgroom.primitives import box, cylinder, icosphere, plane_grid


def test_decimate_sphere_budget_and_topology():
    mesh = icosphere(4)
    out = decimate(mesh, 1000)
    assert out.n_faces == 1000
    assert out.is_watertight() and out.euler_characteristic() == 2
    assert np.max(np.abs(np.linalg.norm(out.vertices, axis=1) - 1)) < 0.05
    assert np.all(out.face_areas() > 0)


def test_decimate_keeps_box_corners():
    mesh = box((2, 2, 2), divisions=6)
    out = decimate(mesh, 12)
    assert out.n_faces == 12
    assert np.max(unsigned_distance(out.vertices, mesh)) < 1e-9


def test_uniformity_evens_out_areas():
    mesh = icosphere(4)
    plain = decimate(mesh, 600, uniformity=0.0)
    even = decimate(mesh, 600, uniformity=1.0)
    cv = lambda m: m.face_areas().std() / m.face_areas().mean()
    assert cv(even) <= cv(plain) + 1e-9


def test_open_boundary_preserved():
    mesh = plane_grid(10, 10)
    out = decimate(mesh, 60)
    o, _ = out.open_edge_count()
    assert o > 0
    lo, hi = out.bbox()
    np.testing.assert_allclose(lo[:2], [0, 0], atol=1e-12)
    np.testing.assert_allclose(hi[:2], [1, 1], atol=1e-12)


def test_subdivide_preserves_geometry():
    mesh = icosphere(1)
    sub = subdivide_midpoint(mesh)
    assert sub.n_faces == 4 * mesh.n_faces
    assert abs(sub.face_areas().sum() - mesh.face_areas().sum()) < 1e-12
    assert sub.is_watertight()


def test_resample_up_and_down():
    mesh = icosphere(1)
    assert abs(resample_faces(mesh, 300).n_faces - 300) <= 6
    with pytest.raises(ValueError):
        resample_faces(mesh, 2)


def test_weld_and_degenerate():
    tri = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1e-9, 0, 0], [1, 1, 0]],
                  [[0, 1, 2], [3, 4, 1], [0, 0, 1]])
    w = weld_vertices(tri, 1e-6)
    assert w.n_vertices == 4
    clean = remove_degenerate_faces(w)
    assert clean.n_faces == 2


def test_largest_component_by_volume():
    big = icosphere(2, radius=2)
    small = icosphere(1, radius=0.3, center=(5, 0, 0))
    v = np.vstack([small.vertices, big.vertices])
    f = np.vstack([small.faces, big.faces + small.n_vertices])
    out = largest_component(TriMesh(v, f))
    assert out.n_faces == big.n_faces
    with pytest.raises(MeshError):
        largest_component(TriMesh(np.zeros((0, 3)), np.zeros((0, 3), int)))


def test_repair_welds_split_cylinder():
    c = cylinder(segments=12, rings=2)
    # duplicate every face's vertices to break connectivity, then repair
    v = c.vertices[c.faces].reshape(-1, 3)
    f = np.arange(len(v)).reshape(-1, 3)
    out = repair(TriMesh(v, f))
    assert out.is_watertight()
    assert out.n_vertices == c.n_vertices
