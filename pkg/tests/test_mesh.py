import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hhons.mesh import (MeshParseError, MeshStructureError, build_cartesian, build_triangular,
                        from_polygons, read_mesh, validate, write_mesh)


def test_cartesian_single_cell():
    m = build_cartesian(1, 1)
    assert (m.n_elements, m.n_faces, len(m.boundary_face_ids)) == (1, 4, 4)


def test_cartesian_32_counts():
    m = build_cartesian(32, 32)
    assert m.n_elements == 1024
    assert m.n_faces == 2112
    assert len(m.boundary_face_ids) == 128
    assert len(m.interior_face_ids) == 1984


def test_cartesian_meshsize():
    assert build_cartesian(4, 4).h == pytest.approx(np.sqrt(2) / 4, abs=1e-15)


def test_cartesian_rectangle_counts():
    m = build_cartesian(3, 2, ((0.0, 3.0), (0.0, 1.0)))
    assert m.n_elements == 6
    assert m.n_faces == 4 * 2 + 3 * 3
    assert m.areas.sum() == pytest.approx(3.0)


def test_generators_reject_bad_sizes():
    with pytest.raises(ValueError):
        build_cartesian(0, 3)
    with pytest.raises(ValueError):
        build_triangular(0)
    with pytest.raises(ValueError):
        build_triangular(4, 1.0)


def test_triangular_single_square():
    m = build_triangular(1, 0.0)
    assert (m.n_elements, m.n_faces) == (2, 5)


@pytest.mark.parametrize("n", [1, 2, 5, 8])
def test_triangular_counts(n):
    m = build_triangular(n, 0.3)
    assert m.n_elements == 2 * n * n
    assert np.all(m.element_sizes() == 3)


def test_triangular_distorted_is_valid():
    m = build_triangular(8, 0.3)
    assert np.all(m.areas > 0)
    assert validate(m) == []


def test_triangular_boundary_fixed():
    a, b = build_triangular(6, 0.0), build_triangular(6, 0.7)
    on_bnd = np.any((a.vertices == 0) | (a.vertices == 1), axis=1)
    assert np.array_equal(a.vertices[on_bnd], b.vertices[on_bnd])
    assert not np.allclose(a.vertices[~on_bnd], b.vertices[~on_bnd])


@pytest.mark.parametrize("build", [lambda n: build_cartesian(n, n), lambda n: build_triangular(n, 0.0)])
def test_refinement_halves_h(build):
    hs = [build(n).h for n in (2, 4, 8, 16)]
    assert np.allclose(np.array(hs[1:]) / hs[:-1], 0.5, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 7), dist=st.floats(0.0, 0.95))
def test_triangular_invariants(n, dist):
    m = build_triangular(n, dist)
    assert validate(m) == []
    assert m.areas.sum() == pytest.approx(1.0, rel=1e-12)
    assert m.areas.min() >= (1 - dist) / (2 * n * n) * (1 - 1e-9)


@settings(max_examples=20, deadline=None)
@given(nx=st.integers(1, 6), ny=st.integers(1, 6))
def test_cartesian_invariants(nx, ny):
    m = build_cartesian(nx, ny)
    assert validate(m) == []
    assert m.n_faces == (nx + 1) * ny + nx * (ny + 1)
    for e in range(m.n_elements):
        flux = (m.face_measures[m.element_faces(e)][:, None] * m.element_normals(e)).sum(axis=0)
        assert np.linalg.norm(flux) <= 1e-12 * m.element_diameters[e]


def test_interior_normals_opposite(tri4):
    for f in tri4.interior_face_ids:
        face = tri4.face(f)
        assert not face.is_boundary
        assert np.allclose(face.normal_per_neighbor[0], -face.normal_per_neighbor[1], atol=1e-14)


def test_face_and_element_records(cart4):
    face = cart4.face(int(cart4.boundary_face_ids[0]))
    assert face.is_boundary and len(face.neighbors) == 1
    el = cart4.element(5)
    assert el.measure == pytest.approx(1 / 16)
    assert all(cart4.face_diameters[f] <= el.diameter for f in el.face_ids)
    assert np.allclose(cart4.vertex(0).coords, [0.0, 0.0])


def test_boundary_faces_cover_boundary(tri4):
    assert tri4.face_measures[tri4.boundary_face_ids].sum() == pytest.approx(4.0)


def test_locate_vertex_and_interior(cart4):
    found = cart4.locate([[0.5, 0.5], [0.1, 0.1]])
    assert len(found[0]) == 4
    assert len(found[1]) == 1


def test_polygon_mesh():
    verts = [[0, 0], [1, 0], [2, 0], [2, 1], [1, 1.2], [0, 1]]
    m = from_polygons(verts, [[0, 1, 4, 5], [1, 2, 3, 4]])
    assert validate(m) == []
    hexa = from_polygons([[np.cos(t), np.sin(t)] for t in np.linspace(0, 2 * np.pi, 7)[:-1]], [list(range(6))])
    assert validate(hexa) == []
    assert hexa.areas[0] == pytest.approx(1.5 * np.sqrt(3))


def test_round_trip(tmp_path):
    m = build_cartesian(2, 2)
    path = tmp_path / "m.txt"
    write_mesh(m, path)
    r = read_mesh(path)
    assert np.array_equal(r.vertices, m.vertices)
    assert np.array_equal(r.elem_vertex_ids, m.elem_vertex_ids)
    assert np.array_equal(r.face_vertices, m.face_vertices)
    assert np.array_equal(r.face_elements, m.face_elements)


def test_non_manifold_face_rejected(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("DIM 2\nVERTICES 5\n0 0\n1 0\n0 1\n1 1\n0 -1\nELEMENTS 3\n3 0 1 2\n3 1 0 4\n3 0 1 3\n")
    with pytest.raises(MeshStructureError):
        read_mesh(path)


def test_empty_file_rejected(tmp_path):
    path = tmp_path / "empty.txt"
    path.write_text("")
    with pytest.raises(MeshParseError):
        read_mesh(path)


def test_parse_error_line_number(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("DIM 2\nVERTICES 3\n0 0\n1 x\n0 1\nELEMENTS 1\n3 0 1 2\n")
    with pytest.raises(MeshParseError) as info:
        read_mesh(path)
    assert info.value.line == 4


def _replace(m, **kw):
    return dataclasses.replace(m, _groups={}, **kw)


def test_flipped_normal_detected():
    m = build_cartesian(4, 4)
    normals = m.elem_normals.copy()
    normals[m.elem_offsets[5]] *= -1
    bad = validate(_replace(m, elem_normals=normals))
    assert [v.kind for v in bad if v.kind == "normal"] == ["normal"]


def test_zero_area_detected():
    m = build_cartesian(4, 4)
    areas = m.areas.copy()
    areas[3] = 0.0
    bad = validate(_replace(m, areas=areas))
    assert len([v for v in bad if v.kind == "measure"]) == 1
