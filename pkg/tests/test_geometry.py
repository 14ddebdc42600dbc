import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from esfem.geometry import (
    MeshError,
    MeshSequence,
    SurfaceMesh,
    icosphere,
    interpolate_frames,
    max_element_diameter,
    synth_sequence,
    validate_mesh,
    vertex_velocity,
)
from oracles import torus_mesh


def test_icosphere_is_valid_closed_surface():
    mesh = icosphere(2)
    report = validate_mesh(mesh)
    assert report.accepted
    assert mesh.euler_characteristic() == 2
    assert report.violations() == []


@pytest.mark.parametrize("k", range(5))
def test_icosphere_counts(k):
    mesh = icosphere(k)
    assert mesh.n_vertices == 10 * 4**k + 2
    assert mesh.n_triangles == 20 * 4**k


def test_icosphere_five_matches_cell_mesh_size():
    mesh = icosphere(5)
    assert (mesh.n_vertices, mesh.n_triangles) == (10242, 20480)


def test_missing_triangle_reports_boundary():
    mesh = icosphere(2)
    holed = SurfaceMesh(mesh.vertices, mesh.triangles[1:])
    report = validate_mesh(holed)
    assert not report.accepted
    assert report.boundary_edges
    assert "boundary" in report.violations()[0]
    with pytest.raises(MeshError, match="boundary"):
        report.raise_if_invalid()


def test_torus_rejected_on_euler_characteristic():
    v, t = torus_mesh()
    # hand count: 48 vertices, 144 edges, 96 faces
    assert (len(v), len(t)) == (48, 96)
    mesh = SurfaceMesh(v, t)
    assert mesh.euler_characteristic() == 0
    report = validate_mesh(mesh)
    assert not report.accepted
    assert len(report.violations()) == 1
    assert "Euler" in report.violations()[0]


def test_flipped_triangle_reports_orientation():
    mesh = icosphere(1)
    tris = mesh.triangles.copy()
    tris[3] = tris[3][::-1]
    report = validate_mesh(SurfaceMesh(mesh.vertices, tris))
    assert not report.accepted
    assert "orient" in report.violations()[0]


def test_non_manifold_edge_reported():
    # three triangles sharing edge (0, 1)
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1]], float)
    t = np.array([[0, 1, 2], [1, 0, 3], [0, 1, 4]])
    report = validate_mesh(SurfaceMesh(v, t))
    assert not report.accepted
    assert report.nonmanifold_edges == [(0, 1)]
    assert any("non-manifold" in v for v in report.violations())


def test_reference_triangle_geometry():
    mesh = SurfaceMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    g = mesh.geometry
    assert g.area[0] == pytest.approx(0.5)
    assert np.allclose(np.abs(g.unit_normal[0]), [0, 0, 1])
    assert np.allclose(g.basis_gradients[0, 0], [-1, -1, 0])
    assert np.allclose(g.basis_gradients[0, 1], [1, 0, 0])
    assert np.allclose(g.basis_gradients[0, 2], [0, 1, 0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=9, max_size=9))
def test_basis_gradients_sum_to_zero(coords):
    v = np.array(coords).reshape(3, 3)
    mesh = SurfaceMesh(v, [[0, 1, 2]])
    try:
        g = mesh.geometry
    except MeshError:
        return
    scale = np.abs(g.basis_gradients).max()
    assert np.allclose(g.basis_gradients[0].sum(axis=0), 0, atol=1e-12 * scale)
    # tangential: orthogonal to the facet normal
    assert np.allclose(g.basis_gradients[0] @ g.unit_normal[0], 0, atol=1e-12 * scale)


def test_degenerate_triangle_named():
    v = [[0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0]]
    mesh = SurfaceMesh(v, [[0, 1, 3], [0, 1, 2]])
    with pytest.raises(MeshError, match="triangle 1"):
        mesh.geometry


def test_icosphere_area_close_to_sphere():
    errs = [abs(icosphere(k).total_area() - 4 * math.pi) / (4 * math.pi) for k in (2, 3, 4)]
    assert errs[1] < 0.02
    assert errs[0] > errs[1] > errs[2]


def test_vertex_velocity_identical_frames():
    m = icosphere(1)
    assert np.array_equal(vertex_velocity(m, m, 1.0), np.zeros_like(m.vertices))


def test_vertex_velocity_translation():
    m = icosphere(1)
    moved = m.with_vertices(m.vertices + [1.0, 0, 0])
    w = vertex_velocity(m, moved, 0.5)
    assert np.allclose(w, [2.0, 0, 0])


def test_vertex_velocity_radial_scaling():
    m = icosphere(2)
    grown = m.with_vertices(1.1 * m.vertices)
    w = vertex_velocity(m, grown, 1.0)
    radial = m.vertices / np.linalg.norm(m.vertices, axis=1, keepdims=True)
    assert np.allclose(w, 0.1 * radial, atol=1e-14)


@pytest.mark.parametrize("tau", [0.0, -1.0])
def test_vertex_velocity_rejects_nonpositive_tau(tau):
    m = icosphere(0)
    with pytest.raises(ValueError):
        vertex_velocity(m, m, tau)


def _translating(times, speed=np.array([0.3, -0.2, 0.1])):
    base = icosphere(1)
    return MeshSequence([base.with_vertices(base.vertices + t * speed, t) for t in times])


def test_interpolation_exact_at_frames():
    seq = _translating([0.0, 1.0, 3.0])
    for i, t in enumerate(seq.times):
        assert interpolate_frames(seq, t) is seq[i]


def test_interpolation_midpoint_is_mean():
    seq = synth_sequence("expanding_sphere", 2, 2.0, subdivisions=1)
    mid = seq.interpolate(1.0)
    assert np.allclose(mid.vertices, 0.5 * (seq[0].vertices + seq[1].vertices), atol=1e-15)
    assert mid.frame_time == 1.0


def test_interpolation_follows_linear_trajectory():
    speed = np.array([0.3, -0.2, 0.1])
    seq = _translating([0.0, 1.0, 2.0], speed)
    base = icosphere(1)
    for t in np.linspace(0, 2, 17):
        assert np.allclose(seq.interpolate(t).vertices, base.vertices + t * speed, atol=1e-14)


@pytest.mark.parametrize("t", [-0.1, 2.1])
def test_interpolation_out_of_range(t):
    seq = _translating([0.0, 1.0, 2.0])
    with pytest.raises(ValueError, match="outside"):
        seq.interpolate(t)


def test_sequence_rejects_non_increasing_times():
    m = icosphere(0)
    with pytest.raises(MeshError, match="increasing"):
        MeshSequence([m.with_vertices(m.vertices, 1.0), m.with_vertices(m.vertices, 1.0)])


def test_sequence_rejects_changed_connectivity():
    m = icosphere(1)
    other = SurfaceMesh(m.vertices, m.triangles[:, [1, 2, 0]], 1.0)
    with pytest.raises(MeshError, match="connectivity"):
        MeshSequence([m, other])


def test_max_element_diameter_equilateral():
    mesh = SurfaceMesh([[0, 0, 0], [2, 0, 0], [1, math.sqrt(3), 0]], [[0, 1, 2]])
    assert max_element_diameter(mesh) == pytest.approx(2.0)


def test_max_element_diameter_icosahedron():
    expected = 4 / math.sqrt(10 + 2 * math.sqrt(5))
    assert max_element_diameter(icosphere(0)) == pytest.approx(expected, rel=1e-12)


def test_max_element_diameter_shrinks_under_refinement():
    h = [max_element_diameter(icosphere(k)) for k in range(5)]
    assert all(a > b for a, b in zip(h, h[1:]))


def test_static_sequence_frames_identical():
    seq = synth_sequence("static_sphere", 5, 1.0, subdivisions=1)
    assert all(np.array_equal(f.vertices, seq[0].vertices) for f in seq.frames)


def test_expanding_sequence_radius():
    seq = synth_sequence("expanding_sphere", 3, 0.5, subdivisions=2, radius=1.0, rate=0.1)
    assert np.allclose(np.linalg.norm(seq.interpolate(1.0).vertices, axis=1), 1.1)


def test_oscillating_ellipsoid_quarter_period():
    seq = synth_sequence("oscillating_ellipsoid", 2, 1.0, subdivisions=2, amplitude=0.25, period=4.0)
    assert seq[1].vertices[:, 0].max() == pytest.approx(1.25)
    assert seq[1].vertices[:, 1].max() == pytest.approx(1.0)


def test_synth_rejects_collapsing_radius():
    with pytest.raises(ValueError):
        synth_sequence("expanding_sphere", 3, 10.0, subdivisions=0, rate=-0.1)


def test_mesh_arrays_are_read_only():
    m = icosphere(0)
    with pytest.raises(ValueError):
        m.vertices[0, 0] = 5.0
