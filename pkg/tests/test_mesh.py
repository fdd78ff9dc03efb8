import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dynslip.fem import build_fe_space
from dynslip.mesh import (Mesh, aspect_ratios, boundary_frames, build_disk_mesh, mesh_quality,
                          read_mesh, triangle_angles, write_mesh)


def test_coarse_mesh_has_unit_diameter():
    m = build_disk_mesh(0, 1.0)
    d = m.vertices[:, None, :] - m.vertices[None, :, :]
    assert abs(np.sqrt((d ** 2).sum(-1)).max() - 1.0) < 1e-12
    assert m.radius == 0.5


@settings(max_examples=8, deadline=None)
@given(level=st.integers(0, 3), scale=st.sampled_from([2.0, 0.5, 3.0]))
def test_meshes_scale_uniformly(level, scale):
    a = build_disk_mesh(level, 1.0)
    b = build_disk_mesh(level, scale)
    np.testing.assert_array_equal(a.triangles, b.triangles)
    np.testing.assert_allclose(b.vertices, scale * a.vertices, rtol=0, atol=1e-14 * scale)


def test_boundary_nodes_on_circle():
    m = build_disk_mesh(3, 1.0)
    r = np.linalg.norm(m.vertices[m.boundary_nodes] - m.center, axis=1)
    assert np.abs(r - 0.5).max() < 1e-12


@pytest.mark.parametrize("level", range(5))
def test_topology(level):
    m = build_disk_mesh(level, 1.0)
    p = m.vertices[m.triangles]
    e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    signed = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    assert np.all(signed > 0)
    edges = {tuple(sorted(e)) for t in m.triangles for e in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0]))}
    assert m.n_vertices - len(edges) + m.n_triangles == 1
    assert len(np.unique(m.vertices.round(12), axis=0)) == m.n_vertices


def _cross_mesh():
    v = np.array([[0.0, 0.0], [0.5, 0.0], [0.0, 0.5], [-0.5, 0.0], [0.0, -0.5]])
    t = np.array([[0, 1, 2], [0, 2, 3], [0, 3, 4], [0, 4, 1]])
    b = np.array([1, 2, 3, 4])
    return Mesh(v, t, b, np.column_stack([b, np.roll(b, -1)]), 1.0)


def test_frames_at_axis_points():
    frames = {f.node: f for f in boundary_frames(_cross_mesh())}
    np.testing.assert_allclose(frames[1].n, [1, 0], atol=1e-15)
    np.testing.assert_allclose(frames[1].tau, [0, 1], atol=1e-15)
    np.testing.assert_allclose(frames[4].n, [0, -1], atol=1e-15)


def test_frames_orthonormal():
    for f in boundary_frames(build_disk_mesh(3, 1.0)):
        assert abs(f.n @ f.tau) < 1e-14
        assert abs(np.linalg.norm(f.n) - 1) < 1e-14


def test_degenerate_frame_rejected():
    m = _cross_mesh()
    bad = Mesh(m.vertices, m.triangles, np.array([0, 1, 2]), m.boundary_edges, 1.0)
    with pytest.raises(ValueError):
        boundary_frames(bad)


def test_quality_and_h_halving():
    q = [mesh_quality(build_disk_mesh(L, 1.0)) for L in range(5)]
    assert q[0].min_angle >= 30.0
    assert all(x.min_angle > 30.0 and not x.degenerate for x in q)
    for L in range(1, 4):
        assert abs(q[L].h_max / q[L + 1].h_max - 2.0) < 0.3


def test_equilateral_aspect_ratio():
    tri = np.array([[[0, 0], [1, 0], [0.5, np.sqrt(3) / 2]]])
    assert abs(aspect_ratios(tri)[0] - 1.0) < 1e-14
    np.testing.assert_allclose(triangle_angles(tri), 60.0)


def test_degenerate_triangle_flagged():
    m = _cross_mesh()
    v = m.vertices.copy()
    v[2] = [0.25, 0.0]
    q = mesh_quality(Mesh(v, m.triangles, m.boundary_nodes, m.boundary_edges, 1.0))
    assert q.degenerate


def test_mesh_file_roundtrip(tmp_path):
    m = build_disk_mesh(2, 1.3)
    write_mesh(m, tmp_path / "m.txt")
    r = read_mesh(tmp_path / "m.txt")
    np.testing.assert_array_equal(r.vertices, m.vertices)
    np.testing.assert_array_equal(r.triangles, m.triangles)
    np.testing.assert_array_equal(r.boundary_nodes, m.boundary_nodes)
    assert r.char_length == 1.3


def test_curved_quadrature_exact_on_disk():
    space = build_fe_space(build_disk_mesh(1, 1.0))
    pts, w = space.quad
    R = 0.5
    assert abs(w.sum() - np.pi * R ** 2) < 1e-13
    r2 = (pts ** 2).sum(-1)
    assert abs((w * r2 ** 2).sum() - np.pi * R ** 6 / 3) < 1e-13
    _, bw, normals, _ = space.bquad
    assert abs(bw.sum() - 2 * np.pi * R) < 1e-13
