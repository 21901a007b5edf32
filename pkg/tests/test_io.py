import numpy as np
import pytest

from hhons.hho import HHOSpace, interpolate, project_pressure
from hhons.io import (CSV_HEADER, cell_averages, centerlines, load_reference, read_convergence_csv,
                      sample_velocity, write_centerlines, write_convergence_csv, write_vtk)
from hhons.mesh import build_cartesian, build_triangular
from hhons.verify import ErrorRecord, RateTable


def linear(x):
    return np.stack([1 + x[..., 1], 2 * x[..., 0] - x[..., 1]], axis=-1)


@pytest.fixture(scope="module")
def field():
    sp = HHOSpace(build_triangular(4, 0.3), 2)
    return interpolate(linear, sp), project_pressure(lambda x: x[..., 0] - 0.5, sp)


def test_cell_averages(field):
    u, p = field
    uavg, pavg = cell_averages(u, p)
    mesh = u.space.mesh
    assert np.allclose(uavg, linear(mesh.barycenters))
    assert np.allclose(pavg, mesh.barycenters[:, 0] - 0.5)
    assert np.all(cell_averages(u)[1] == 0)


def test_vtk_layout(field, tmp_path):
    u, p = field
    path = tmp_path / "out.vtk"
    write_vtk(path, u, p, title="t")
    lines = path.read_text().splitlines()
    mesh = u.space.mesh
    assert lines[0].startswith("# vtk DataFile Version 3.0") and lines[2] == "ASCII"
    assert f"POINTS {mesh.n_vertices} double" in lines
    assert f"CELLS {mesh.n_elements} {4 * mesh.n_elements}" in lines
    i = lines.index(f"CELL_TYPES {mesh.n_elements}")
    assert set(lines[i + 1:i + 1 + mesh.n_elements]) == {"5"}
    assert "VECTORS velocity double" in lines and "SCALARS pressure double 1" in lines


def test_vtk_quads(tmp_path):
    sp = HHOSpace(build_cartesian(2, 2), 1)
    write_vtk(tmp_path / "q.vtk", sp.zero_velocity())
    text = (tmp_path / "q.vtk").read_text().splitlines()
    i = text.index("CELL_TYPES 4")
    assert text[i + 1:i + 5] == ["9"] * 4


def test_convergence_csv_round_trip(tmp_path):
    tab = RateTable([ErrorRecord(0.2, 1e-2, 2e-2, picard_iters=3), ErrorRecord(0.1, 2.5e-3, 5e-3, picard_iters=4)])
    path = tmp_path / "c.csv"
    write_convergence_csv(path, tab)
    assert path.read_text().splitlines()[0] == ",".join(CSV_HEADER)
    data = read_convergence_csv(path)
    assert np.isnan(data["rate_u"][0]) and data["rate_u"][1] == pytest.approx(2.0)
    assert data["picard_iters"].tolist() == [3, 4]


def test_sampling_linear_field(field):
    u, _ = field
    pts = np.array([[0.5, 0.5], [0.0, 0.0], [1.0, 0.3], [0.123, 0.987]])
    for kind in ("cell", "reconstruction"):
        assert np.allclose(sample_velocity(u, pts, kind), linear(pts), atol=1e-12)
    with pytest.raises(ValueError, match="outside"):
        sample_velocity(u, [[1.5, 0.5]])
    with pytest.raises(ValueError, match="unknown field"):
        sample_velocity(u, pts, "faces")


def test_reconstruction_reproduces_degree_k1():
    sp = HHOSpace(build_cartesian(3, 3), 1)
    quad = lambda x: np.stack([x[..., 0] * x[..., 1], x[..., 1] ** 2], axis=-1)
    u = interpolate(quad, sp)
    pts = np.random.default_rng(3).uniform(0, 1, (30, 2))
    assert np.allclose(sample_velocity(u, pts, "reconstruction"), quad(pts), atol=1e-12)


def test_centerlines_files(field, tmp_path):
    u, _ = field
    prof = centerlines(u, n_points=9)
    assert np.allclose(prof.u1, 1 + prof.x2)
    assert np.allclose(prof.u2, 2 * prof.x1 - 0.5)
    p1, p2 = write_centerlines(tmp_path, prof)
    assert p1.name == "centerline_u1.csv" and p1.read_text().startswith("x2,u1\n")
    assert p2.read_text().startswith("x1,u2\n") and len(p2.read_text().splitlines()) == 10


def test_load_reference(tmp_path):
    path = tmp_path / "ref.txt"
    path.write_text("# header\n0 0\n0.5 -0.1\n1 1\n")
    x, y = load_reference(path)
    assert x.tolist() == [0, 0.5, 1] and y.tolist() == [0, -0.1, 1]
