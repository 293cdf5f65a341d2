import numpy as np
import pytest
from hypothesis import given, strategies as st

from elastodg.mesh import (
    FaceTag, MeshError, axis_sigma, build_structured_mesh, cell_geometry, face_quadrature_trace,
    mesh_from_cells, write_mesh_text,
)
from elastodg.quadrature import edge_rule


@pytest.mark.parametrize("n, nv, nc, nf, nint", [(1, 4, 2, 5, 1), (2, 9, 8, 16, 8)])
def test_counts(n, nv, nc, nf, nint):
    m = build_structured_mesh(n)
    assert (len(m.vertices), m.num_cells, m.num_faces) == (nv, nc, nf)
    assert len(m.interior_faces) == nint
    assert len(m.faces_with_tag(FaceTag.GAMMA)) == nf - nint


def test_h_max():
    assert build_structured_mesh(8).h_max == pytest.approx(np.sqrt(2) / 8, rel=1e-14)
    assert build_structured_mesh(8).h_max == pytest.approx(0.17678, abs=1e-5)


def test_reference_cell_geometry():
    m = mesh_from_cells(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]))
    g = cell_geometry(m, 0)
    assert np.array_equal(g.B, np.eye(2)) and g.det == 1.0


def test_sheared_cell_geometry():
    m = mesh_from_cells(np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]), np.array([[0, 1, 2]]))
    g = cell_geometry(m, 0)
    assert abs(g.det) == pytest.approx(1.0) and g.h == pytest.approx(np.sqrt(2))
    assert np.linalg.norm(g.normals, axis=1) == pytest.approx(np.ones(3))


@pytest.mark.parametrize("n", [1, 3, 8])
def test_scaled_cells(n):
    m = build_structured_mesh(n)
    assert m.det == pytest.approx(np.full(m.num_cells, 1.0 / n ** 2), rel=1e-12)


def test_degenerate_cell_rejected():
    with pytest.raises(MeshError):
        mesh_from_cells(np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]), np.array([[0, 1, 2]]))


@pytest.mark.parametrize("bad", [0, -2, 1.5])
def test_invalid_n(bad):
    with pytest.raises(MeshError):
        build_structured_mesh(bad)


@given(st.integers(1, 12))
def test_connectivity_invariants(n):
    m = build_structured_mesh(n)
    interior = m.face_tag == FaceTag.INTERIOR
    assert np.all((m.face_cells[:, 1] >= 0) == interior)
    assert np.all(m.face_cells[:, 0] >= 0)
    # each interior face appears in exactly two cells, boundary in one
    counts = np.bincount(m.cell_faces.ravel(), minlength=m.num_faces)
    assert np.array_equal(counts, np.where(interior, 2, 1))
    assert np.all(m.det > 0)
    assert np.allclose(np.linalg.norm(m.face_normal, axis=1), 1.0, atol=1e-14)
    assert m.face_length == pytest.approx(np.linalg.norm(
        m.vertices[m.face_vertices[:, 1]] - m.vertices[m.face_vertices[:, 0]], axis=1))
    assert np.sum(m.det) / 2 == pytest.approx(1.0, abs=1e-13)
    assert m.h_max == pytest.approx(np.sqrt(2) / n, rel=1e-13)


@given(st.integers(1, 10))
def test_boundary_normals_point_outward(n):
    m = build_structured_mesh(n)
    bf = m.faces_with_tag(FaceTag.GAMMA, FaceTag.SIGMA)
    mid = m.vertices[m.face_vertices[bf]].mean(axis=1)
    assert np.all(np.einsum("fi,fi->f", m.face_normal[bf], mid - 0.5) > 0)


@given(st.integers(1, 10))
def test_normals_flip_between_sides(n):
    m = build_structured_mesh(n)
    for f in m.interior_faces:
        c0, c1 = m.face_cells[f]
        l0, l1 = m.face_local[f]
        assert m.cell_face_sign[c0, l0] == 1 and m.cell_face_sign[c1, l1] == -1
        # outward normal of the first cell is the stored normal
        g0, g1 = cell_geometry(m, c0), cell_geometry(m, c1)
        assert g0.normals[l0] == pytest.approx(m.face_normal[f])
        assert g1.normals[l1] == pytest.approx(-m.face_normal[f])


@given(st.integers(1, 8))
def test_constant_flux_through_cell_boundary_vanishes(n):
    m = build_structured_mesh(n)
    v = np.array([0.3, -1.7])
    for c in range(m.num_cells):
        f = m.cell_faces[c]
        flux = np.sum(m.cell_face_sign[c] * m.face_length[f] * (m.face_normal[f] @ v))
        assert abs(flux) < 1e-14


def test_lower_cell_first_and_normal_orientation():
    m = build_structured_mesh(4)
    f = m.interior_faces
    assert np.all(m.face_cells[f, 0] < m.face_cells[f, 1])


def test_traces_match_on_both_sides():
    m = build_structured_mesh(5)
    t = edge_rule(4).points[:, 0]
    assert len(t) == 3
    worst = 0.0
    for f in m.interior_faces:
        x0 = m.map_to_physical(m.face_cells[f, 0], face_quadrature_trace(m, f, 0, t))
        x1 = m.map_to_physical(m.face_cells[f, 1], face_quadrature_trace(m, f, 1, t))
        worst = max(worst, np.abs(x0 - x1).max())
    assert worst < 1e-13


def test_midpoint_trace():
    m = build_structured_mesh(3)
    f = m.interior_faces[4]
    mid = m.vertices[m.face_vertices[f]].mean(axis=0)
    for side in (0, 1):
        x = m.map_to_physical(m.face_cells[f, side], face_quadrature_trace(m, f, side, np.array([0.5])))
        assert x[0] == pytest.approx(mid, abs=1e-15)


def test_bottom_boundary_trace_and_second_side_error():
    m = build_structured_mesh(4)
    bottom = [f for f in m.faces_with_tag(FaceTag.GAMMA) if np.all(m.vertices[m.face_vertices[f], 1] == 0)]
    assert len(bottom) == 4
    t = edge_rule(6).points[:, 0]
    for f in bottom:
        x = m.map_to_physical(m.face_cells[f, 0], face_quadrature_trace(m, f, 0, t))
        assert np.all(x[:, 1] == 0.0)
        with pytest.raises(MeshError):
            face_quadrature_trace(m, f, 1, t)


def test_sigma_tagging():
    m = build_structured_mesh(4, sigma_tagging=axis_sigma("left"))
    sig = m.faces_with_tag(FaceTag.SIGMA)
    assert len(sig) == 4
    assert np.all(m.vertices[m.face_vertices[sig], 0] == 0.0)
    assert len(m.faces_with_tag(FaceTag.GAMMA)) == 12
    with pytest.raises(MeshError):
        axis_sigma("diagonal")


def test_mesh_dump(tmp_path):
    m = build_structured_mesh(1)
    p = tmp_path / "mesh.txt"
    write_mesh_text(m, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "4" and lines[5] == "2" and lines[8] == "5"
    assert lines[9].split()[2] in {"INTERIOR", "GAMMA", "SIGMA"}
