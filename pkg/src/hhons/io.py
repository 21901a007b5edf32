"""Output: legacy VTK fields, convergence CSV, centerline profiles."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .basis import eval_cell_basis
from .hho import BrokenPressure, HybridVelocity

VTK_TRIANGLE, VTK_POLYGON, VTK_QUAD = 5, 7, 9
CSV_HEADER = ("meshsize", "erru", "errp", "rate_u", "rate_p", "picard_iters")


def _fmt(x) -> str:
    return "" if x is None or not np.isfinite(x) else f"{x:.12g}"


def cell_averages(u: HybridVelocity, p: BrokenPressure | None = None):
    """Per-element means ``(nE, 2)`` of the cell velocity and ``(nE,)`` of
    the pressure (zeros without ``p``)."""
    sp = u.space
    uavg = np.zeros((sp.mesh.n_elements, 2))
    pavg = np.zeros(sp.mesh.n_elements)
    for g in sp.groups:
        uavg[g.ids] = np.einsum("ea,eia->ei", g.cell_mass, u.cell[g.ids]) / g.area[:, None]
        if p is not None:
            pavg[g.ids] = np.einsum("ea,ea->e", g.cell_mass, p.coeffs[g.ids]) / g.area
    return uavg, pavg


def write_vtk(path, u: HybridVelocity, p: BrokenPressure | None = None, title="hho solution"):
    """Legacy ASCII unstructured grid with cell data ``velocity`` and
    ``pressure`` (element averages)."""
    mesh = u.space.mesh
    uavg, pavg = cell_averages(u, p)
    sizes = mesh.element_sizes()
    types = np.where(sizes == 3, VTK_TRIANGLE, np.where(sizes == 4, VTK_QUAD, VTK_POLYGON))
    lines = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {mesh.n_vertices} double"]
    lines += [f"{x:.16g} {y:.16g} 0" for x, y in mesh.vertices]
    lines.append(f"CELLS {mesh.n_elements} {mesh.n_elements + len(mesh.elem_vertex_ids)}")
    for e in range(mesh.n_elements):
        vids = mesh.element_vertices(e)
        lines.append(" ".join(map(str, [len(vids), *vids])))
    lines.append(f"CELL_TYPES {mesh.n_elements}")
    lines += [str(t) for t in types]
    lines += [f"CELL_DATA {mesh.n_elements}", "VECTORS velocity double"]
    lines += [f"{a:.16g} {b:.16g} 0" for a, b in uavg]
    lines += ["SCALARS pressure double 1", "LOOKUP_TABLE default"]
    lines += [f"{x:.16g}" for x in pavg]
    Path(path).write_text("\n".join(lines) + "\n")


def write_convergence_csv(path, table):
    """One row per level; the rate columns are empty on the first row."""
    ru, rp = table.rates_u, table.rates_p
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for i, rec in enumerate(table.records):
            rate_u = ru[i - 1] if i > 0 else None
            rate_p = rp[i - 1] if i > 0 else None
            w.writerow([_fmt(rec.h), _fmt(rec.err_u), _fmt(rec.err_p), _fmt(rate_u), _fmt(rate_p),
                        rec.picard_iters])


def read_convergence_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) if r[k] else np.nan for r in rows]) for k in CSV_HEADER}


# -- centerlines ------------------------------------------------------------


@dataclass
class CenterlineProfile:
    """``u1`` along ``x1 = 1/2`` against ``x2`` and ``u2`` along ``x2 = 1/2``
    against ``x1``."""

    x2: np.ndarray
    u1: np.ndarray
    x1: np.ndarray
    u2: np.ndarray


def _reconstruction_values(u: HybridVelocity, eid, points):
    """Values ``(2, n)`` of the local potential reconstruction."""
    sp = u.space
    out = np.zeros((2, len(eid)))
    for g in sp.groups:
        pos = np.searchsorted(g.ids, eid)
        sel = (pos < len(g.ids)) & (g.ids[np.minimum(pos, len(g.ids) - 1)] == eid)
        if not np.any(sel):
            continue
        li = pos[sel]
        coef = np.einsum("nbl,nil->nib", g.R[li], g.gather(u)[li])
        phi = eval_cell_basis(points[sel], g.xT[li], g.hT[li], sp.k + 1)
        out[:, sel] = np.einsum("nb,nib->in", phi, coef)
    return out


def sample_velocity(u: HybridVelocity, points, field="cell") -> np.ndarray:
    """Velocity values ``(n, 2)`` at ``points``, averaged over all elements
    whose closure contains the point. ``field`` selects the cell polynomial
    (``"cell"``) or the degree k+1 potential reconstruction
    (``"reconstruction"``)."""
    sp = u.space
    points = np.atleast_2d(np.asarray(points, dtype=float))
    owners = sp.mesh.locate(points)
    if any(not o for o in owners):
        raise ValueError("sample point outside the mesh")
    pid = np.concatenate([np.full(len(o), i) for i, o in enumerate(owners)])
    eid = np.concatenate([np.asarray(o) for o in owners])
    if field == "cell":
        vals = sp.eval_cell_polynomial(u.cell, eid, points[pid])    # (2, n_pairs)
    elif field == "reconstruction":
        vals = _reconstruction_values(u, eid, points[pid])
    else:
        raise ValueError(f"unknown field {field!r}")
    counts = np.bincount(pid, minlength=len(points))
    out = np.stack([np.bincount(pid, vals[i], len(points)) for i in range(2)], axis=1)
    return out / counts[:, None]


def centerlines(u: HybridVelocity, n_points=129, field="cell") -> CenterlineProfile:
    t = np.linspace(0.0, 1.0, n_points)
    half = np.full_like(t, 0.5)
    v1 = sample_velocity(u, np.stack([half, t], axis=1), field)
    v2 = sample_velocity(u, np.stack([t, half], axis=1), field)
    return CenterlineProfile(t, v1[:, 0], t.copy(), v2[:, 1])


def write_centerlines(directory, profile: CenterlineProfile, stem="centerline"):
    """Two CSV files ``<stem>_u1.csv`` (x2,u1) and ``<stem>_u2.csv`` (x1,u2)."""
    directory = Path(directory)
    paths = []
    for name, x, y, cols in (("u1", profile.x2, profile.u1, ("x2", "u1")),
                             ("u2", profile.x1, profile.u2, ("x1", "u2"))):
        path = directory / f"{stem}_{name}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            w.writerows([_fmt(a), _fmt(b)] for a, b in zip(x, y))
        paths.append(path)
    return paths


def load_reference(path):
    """Two-column whitespace-separated data with ``#`` comments."""
    data = np.loadtxt(path, comments="#", ndmin=2)
    return data[:, 0], data[:, 1]
