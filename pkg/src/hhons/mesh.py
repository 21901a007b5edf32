"""2D polytopal meshes: generators, file I/O, validation.

A :class:`Mesh` stores flat numpy arrays. Elements are counter-clockwise
vertex loops; face ``j`` of an element joins its vertices ``j`` and ``j+1``.
Outward unit normals are stored per (element, face) pair.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class MeshParseError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class MeshStructureError(ValueError):
    pass


@dataclass(frozen=True)
class Vertex:
    id: int
    coords: np.ndarray


@dataclass(frozen=True)
class Face:
    id: int
    vertex_ids: tuple
    measure: float
    diameter: float
    midpoint: np.ndarray
    neighbors: tuple
    normal_per_neighbor: tuple
    is_boundary: bool


@dataclass(frozen=True)
class Element:
    id: int
    face_ids: tuple
    vertex_ids: tuple
    measure: float
    diameter: float
    barycenter: np.ndarray


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable polygonal mesh.

    Attributes
    ----------
    vertices : (nv, 2) coordinates.
    elem_offsets, elem_vertex_ids : CSR storage of element vertex loops.
    elem_face_ids : CSR (same offsets) face ids; face ``j`` of an element joins
        its vertices ``j`` and ``j+1``.
    elem_normals : (sum of element sizes, 2) outward unit normals, same CSR.
    face_vertices : (nf, 2) vertex ids of each face.
    face_elements : (nf, 2) adjacent element ids, ``-1`` for the missing one.
    """

    vertices: np.ndarray
    elem_offsets: np.ndarray
    elem_vertex_ids: np.ndarray
    elem_face_ids: np.ndarray
    elem_normals: np.ndarray
    face_vertices: np.ndarray
    face_elements: np.ndarray
    areas: np.ndarray
    barycenters: np.ndarray
    element_diameters: np.ndarray
    face_measures: np.ndarray
    face_midpoints: np.ndarray
    face_tangents: np.ndarray
    _groups: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_elements(self) -> int:
        return len(self.elem_offsets) - 1

    @property
    def n_faces(self) -> int:
        return len(self.face_vertices)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def face_diameters(self) -> np.ndarray:
        return self.face_measures

    @property
    def h(self) -> float:
        return float(self.element_diameters.max())

    @property
    def boundary_face_ids(self) -> np.ndarray:
        return np.nonzero(self.face_elements[:, 1] < 0)[0]

    @property
    def interior_face_ids(self) -> np.ndarray:
        return np.nonzero(self.face_elements[:, 1] >= 0)[0]

    @property
    def is_boundary_face(self) -> np.ndarray:
        return self.face_elements[:, 1] < 0

    def element_vertices(self, e: int) -> np.ndarray:
        return self.elem_vertex_ids[self.elem_offsets[e]:self.elem_offsets[e + 1]]

    def element_faces(self, e: int) -> np.ndarray:
        return self.elem_face_ids[self.elem_offsets[e]:self.elem_offsets[e + 1]]

    def element_normals(self, e: int) -> np.ndarray:
        return self.elem_normals[self.elem_offsets[e]:self.elem_offsets[e + 1]]

    def element_sizes(self) -> np.ndarray:
        return np.diff(self.elem_offsets)

    def groups(self):
        """Element ids grouped by face count, as ``{nfaces: ids}``."""
        if not self._groups:
            sizes = self.element_sizes()
            for m in np.unique(sizes):
                self._groups[int(m)] = np.nonzero(sizes == m)[0]
        return self._groups

    def group_arrays(self, nfaces: int):
        """Per-group ``(elements, vertex_ids, face_ids, normals)`` with a
        leading element axis."""
        ids = self.groups()[nfaces]
        idx = self.elem_offsets[ids][:, None] + np.arange(nfaces)
        return ids, self.elem_vertex_ids[idx], self.elem_face_ids[idx], self.elem_normals[idx]

    def vertex(self, i: int) -> Vertex:
        return Vertex(i, self.vertices[i].copy())

    def face(self, f: int) -> Face:
        nbrs = tuple(int(e) for e in self.face_elements[f] if e >= 0)
        normals = []
        for e in nbrs:
            j = int(np.nonzero(self.element_faces(e) == f)[0][0])
            normals.append(self.element_normals(e)[j].copy())
        return Face(f, tuple(int(v) for v in self.face_vertices[f]), float(self.face_measures[f]),
                    float(self.face_measures[f]), self.face_midpoints[f].copy(), nbrs,
                    tuple(normals), len(nbrs) == 1)

    def element(self, e: int) -> Element:
        return Element(e, tuple(int(f) for f in self.element_faces(e)),
                       tuple(int(v) for v in self.element_vertices(e)), float(self.areas[e]),
                       float(self.element_diameters[e]), self.barycenters[e].copy())

    def locate(self, points, tol=1e-12):
        """For each point, the list of elements whose closure contains it."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        found = [[] for _ in range(len(points))]
        for m in self.groups():
            ids, vids, _, _ = self.group_arrays(m)
            poly = self.vertices[vids]                       # (ne, m, 2)
            edge = np.roll(poly, -1, axis=1) - poly
            rel = points[:, None, None, :] - poly[None]      # (np, ne, m, 2)
            cross = edge[None, ..., 0] * rel[..., 1] - edge[None, ..., 1] * rel[..., 0]
            scale = np.linalg.norm(edge, axis=-1)[None]
            inside = np.all(cross >= -tol * scale * self.element_diameters[ids][None, :, None], axis=-1)
            for p, e in zip(*np.nonzero(inside)):
                found[p].append(int(ids[e]))
        return found


def from_polygons(vertices, polygons) -> Mesh:
    """Build a mesh from vertex coordinates and counter-clockwise polygons.

    Raises :class:`MeshStructureError` if a face is shared by more than two
    elements or an element repeats a vertex.
    """
    vertices = np.asarray(vertices, dtype=float)
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise MeshStructureError("vertices must have shape (n, 2)")
    polygons = [np.asarray(p, dtype=int) for p in polygons]
    if not polygons:
        raise MeshStructureError("mesh has no elements")
    sizes = np.array([len(p) for p in polygons])
    if np.any(sizes < 3):
        raise MeshStructureError("elements need at least three vertices")
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    loop = np.concatenate(polygons)
    if loop.min() < 0 or loop.max() >= len(vertices):
        raise MeshStructureError("element references a missing vertex")
    for e, p in enumerate(polygons):
        if len(set(p.tolist())) != len(p):
            raise MeshStructureError(f"element {e} repeats a vertex")

    nxt = np.concatenate([np.roll(p, -1) for p in polygons])
    owner = np.repeat(np.arange(len(polygons)), sizes)
    keys = np.sort(np.stack([loop, nxt], axis=1), axis=1)
    uniq, face_of_edge, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    face_of_edge = face_of_edge.ravel()
    if np.any(counts > 2):
        bad = np.nonzero(counts > 2)[0]
        raise MeshStructureError(f"non-manifold faces {uniq[bad].tolist()} shared by more than two elements")

    nf = len(uniq)
    face_elements = -np.ones((nf, 2), dtype=int)
    # first occurrence of each face provides its orientation
    order = np.argsort(face_of_edge, kind="stable")
    first = np.ones(len(order), dtype=bool)
    first[1:] = face_of_edge[order][1:] != face_of_edge[order][:-1]
    face_vertices = np.empty((nf, 2), dtype=int)
    fo = face_of_edge[order]
    face_vertices[fo[first]] = np.stack([loop[order][first], nxt[order][first]], axis=1)
    face_elements[fo[first], 0] = owner[order][first]
    face_elements[fo[~first], 1] = owner[order][~first]
    if np.any(face_elements[:, 0] == face_elements[:, 1]):
        raise MeshStructureError("an element touches the same face twice")

    a = vertices[loop]
    b = vertices[nxt]
    edge = b - a
    length = np.linalg.norm(edge, axis=1)
    if np.any(length <= 0.0):
        raise MeshStructureError("zero-length face")
    normals = np.stack([edge[:, 1], -edge[:, 0]], axis=1) / length[:, None]

    cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    areas = 0.5 * np.add.reduceat(cross, offsets[:-1])
    cx = np.add.reduceat((a[:, 0] + b[:, 0]) * cross, offsets[:-1])
    cy = np.add.reduceat((a[:, 1] + b[:, 1]) * cross, offsets[:-1])
    means = np.stack([np.add.reduceat(a[:, 0], offsets[:-1]), np.add.reduceat(a[:, 1], offsets[:-1])], 1) / sizes[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        bary = np.stack([cx, cy], axis=1) / (6.0 * areas[:, None])
    degenerate = np.abs(areas) <= 1e-300
    bary[degenerate] = means[degenerate]

    diam = np.empty(len(polygons))
    for e, p in enumerate(polygons):
        pts = vertices[p]
        diam[e] = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1).max())

    fa = vertices[face_vertices[:, 0]]
    fb = vertices[face_vertices[:, 1]]
    fmeas = np.linalg.norm(fb - fa, axis=1)
    return Mesh(vertices=vertices, elem_offsets=offsets, elem_vertex_ids=loop,
                elem_face_ids=face_of_edge, elem_normals=normals, face_vertices=face_vertices,
                face_elements=face_elements, areas=areas, barycenters=bary, element_diameters=diam,
                face_measures=fmeas, face_midpoints=0.5 * (fa + fb),
                face_tangents=(fb - fa) / fmeas[:, None])


# -- generators -------------------------------------------------------------


def build_cartesian(nx: int, ny: int, domain=((0.0, 1.0), (0.0, 1.0))) -> Mesh:
    """Uniform ``nx`` x ``ny`` quadrilateral mesh of an axis-aligned box."""
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be >= 1")
    (x0, x1), (y0, y1) = domain
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    verts = np.stack([X.ravel(), Y.ravel()], axis=1)
    vid = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)
    quads = np.stack([vid[:-1, :-1], vid[1:, :-1], vid[1:, 1:], vid[:-1, 1:]], axis=-1)
    # element order: row by row in y, then x
    quads = quads.transpose(1, 0, 2).reshape(-1, 4)
    return from_polygons(verts, quads)


def build_triangular(n: int, distortion: float = 0.0) -> Mesh:
    """Structured triangulation of the unit square with ``2 n**2`` triangles.

    Cell diagonals alternate in a checkerboard pattern. Interior vertices are
    displaced by ``distortion/(4n) * cos(pi n x1) cos(pi n x2) * (1, -1)``;
    triangle areas stay at least ``(1 - distortion) / (2 n**2)``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= distortion < 1.0:
        raise ValueError("distortion must lie in [0, 1)")
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    verts = np.stack([X.ravel(), Y.ravel()], axis=1)
    if distortion > 0.0:
        interior = np.all((verts > 0.0) & (verts < 1.0), axis=1)
        i = np.rint(verts[:, 0] * n)
        j = np.rint(verts[:, 1] * n)
        amp = distortion / (4.0 * n) * np.cos(np.pi * i) * np.cos(np.pi * j)
        verts = verts + (interior * amp)[:, None] * np.array([1.0, -1.0])
    vid = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    v00, v10, v11, v01 = (vid[:-1, :-1].T, vid[1:, :-1].T, vid[1:, 1:].T, vid[:-1, 1:].T)
    # diagonals alternate in a checkerboard; the displaced vertices are the
    # diagonal end points, which keeps every triangle positive
    even = ((np.arange(n)[:, None] + np.arange(n)) % 2 == 0)
    first = np.where(even[..., None], np.stack([v00, v10, v11], -1), np.stack([v00, v10, v01], -1))
    second = np.where(even[..., None], np.stack([v00, v11, v01], -1), np.stack([v10, v11, v01], -1))
    tris = np.stack([first, second], axis=2).reshape(-1, 3)
    return from_polygons(verts, tris)


# -- file I/O ---------------------------------------------------------------


def write_mesh(mesh: Mesh, path) -> None:
    """Write the polygonal text format (``DIM``/``VERTICES``/``ELEMENTS``)."""
    lines = ["DIM 2", f"VERTICES {mesh.n_vertices}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines.append(f"ELEMENTS {mesh.n_elements}")
    for e in range(mesh.n_elements):
        vs = mesh.element_vertices(e)
        lines.append(" ".join([str(len(vs))] + [str(v) for v in vs]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path, format: str = "polygonal-text") -> Mesh:
    """Read a polygonal text mesh; faces are derived from element loops."""
    if format != "polygonal-text":
        raise ValueError(f"unsupported mesh format {format!r}")
    raw = Path(path).read_text().splitlines()
    lines = [(i + 1, ln.split("#", 1)[0].split()) for i, ln in enumerate(raw)]
    lines = [(no, tok) for no, tok in lines if tok]
    if not lines:
        raise MeshParseError("empty mesh file", 1)
    it = iter(lines)

    def expect(keyword):
        try:
            no, tok = next(it)
        except StopIteration:
            raise MeshParseError(f"missing {keyword} section", len(raw) + 1) from None
        if tok[0].upper() != keyword or len(tok) != 2:
            raise MeshParseError(f"expected '{keyword} <value>'", no)
        try:
            return int(tok[1])
        except ValueError:
            raise MeshParseError(f"invalid {keyword} value {tok[1]!r}", no) from None

    if expect("DIM") != 2:
        raise MeshParseError("only DIM 2 is supported", lines[0][0])
    nv = expect("VERTICES")
    verts = []
    for _ in range(nv):
        try:
            no, tok = next(it)
        except StopIteration:
            raise MeshParseError("truncated VERTICES section", len(raw) + 1) from None
        try:
            if len(tok) != 2:
                raise ValueError
            verts.append([float(tok[0]), float(tok[1])])
        except ValueError:
            raise MeshParseError("expected two coordinates", no) from None
    ne = expect("ELEMENTS")
    polys = []
    for _ in range(ne):
        try:
            no, tok = next(it)
        except StopIteration:
            raise MeshParseError("truncated ELEMENTS section", len(raw) + 1) from None
        try:
            ids = [int(t) for t in tok]
        except ValueError:
            raise MeshParseError("non-integer vertex index", no) from None
        if ids[0] != len(ids) - 1:
            raise MeshParseError(f"vertex count {ids[0]} does not match {len(ids) - 1} indices", no)
        if min(ids[1:]) < 0 or max(ids[1:]) >= nv:
            raise MeshParseError("vertex index out of range", no)
        polys.append(ids[1:])
    extra = next(it, None)
    if extra is not None:
        raise MeshParseError("unexpected trailing content", extra[0])
    return from_polygons(np.array(verts), polys)


# -- validation -------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    kind: str      # "measure", "normal", "closure", "diameter", "adjacency"
    entity: int
    message: str


def validate(mesh: Mesh, rtol: float = 1e-12) -> list:
    """Check the geometric and topological invariants; returns violations."""
    out = []
    for e in range(mesh.n_elements):
        pts = mesh.vertices[mesh.element_vertices(e)]
        nxt = np.roll(pts, -1, axis=0)
        shoelace = 0.5 * np.sum(pts[:, 0] * nxt[:, 1] - pts[:, 1] * nxt[:, 0])
        area = mesh.areas[e]
        if not area > 0.0 or not math.isfinite(area):
            out.append(Violation("measure", e, f"element {e} has non-positive measure {area:g}"))
        elif abs(area - shoelace) > rtol * abs(shoelace) * 10:
            out.append(Violation("measure", e, f"element {e} measure differs from shoelace area"))
        faces = mesh.element_faces(e)
        normals = mesh.element_normals(e)
        hT = mesh.element_diameters[e]
        flux = np.zeros(2)
        for f, n in zip(faces, normals):
            flux += mesh.face_measures[f] * n
            unit = abs(np.linalg.norm(n) - 1.0) <= 1e-12
            outward = np.dot(n, mesh.face_midpoints[f] - mesh.barycenters[e]) > 0.0
            along = abs(np.dot(n, mesh.face_tangents[f])) <= 1e-10
            if not (unit and outward and along):
                out.append(Violation("normal", e, f"normal of face {f} in element {e} is not an outward unit normal"))
            if mesh.face_measures[f] > hT * (1 + rtol):
                out.append(Violation("diameter", e, f"face {f} is longer than the diameter of element {e}"))
        if np.linalg.norm(flux) > 1e-12 * max(hT, 1.0):
            out.append(Violation("closure", e, f"sum of |F| n_TF over element {e} is {np.linalg.norm(flux):.3e}"))
    flagged = {v.entity for v in out if v.kind == "normal"}
    for f in mesh.interior_face_ids:
        e0, e1 = mesh.face_elements[f]
        if e0 in flagged or e1 in flagged:
            continue
        n0 = mesh.element_normals(e0)[mesh.element_faces(e0) == f][0]
        n1 = mesh.element_normals(e1)[mesh.element_faces(e1) == f][0]
        if np.linalg.norm(n0 + n1) > 1e-12:
            out.append(Violation("normal", int(e0), f"interior face {f} normals are not opposite"))
    for f in range(mesh.n_faces):
        if mesh.face_elements[f, 0] < 0:
            out.append(Violation("adjacency", f, f"face {f} has no neighbor"))
    return out
