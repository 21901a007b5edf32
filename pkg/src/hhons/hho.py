"""HHO velocity/pressure spaces, local reconstructions and discrete norms.

Local scalar layout of an element with ``m`` faces is
``[cell (nk), face 0 (k+1), ..., face m-1 (k+1)]`` with ``nls`` entries; a
local vector unknown has shape ``(2, nls)`` (component first).

All element operators are computed in batches over the elements sharing the
same number of faces (see :class:`ElementGroup`).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import (ConditioningError, cholesky_solve, dim_cell, dim_face, element_rule_batch,
                    eval_cell_basis, eval_face_basis, face_rule_batch, gram)


class ElementGroup:
    """Geometry, basis values and reconstruction operators for a batch of
    elements with ``m`` faces."""

    def __init__(self, space: "HHOSpace", m: int):
        mesh, k = space.mesh, space.k
        nk, nk1, nf = space.nk, space.nk1, space.nf
        self.m = m
        self.k = k
        ids, vids, fids, normals = mesh.group_arrays(m)
        self.ids, self.faces, self.normals = ids, fids, normals
        ne = len(ids)
        self.nls = nls = nk + m * nf
        verts = mesh.vertices[vids]
        self.xT = mesh.barycenters[ids]
        self.hT = mesh.element_diameters[ids]
        qo = space.quad_order

        self.qp, self.qw = element_rule_batch(verts, self.xT, qo)
        a, b = verts, np.roll(verts, -1, axis=1)
        self.fqp, self.fqw = face_rule_batch(a, b, qo)

        xT, hT = self.xT[:, None, :], self.hT[:, None]
        phi, dphi = eval_cell_basis(self.qp, xT, hT, k, derivative=True)
        phi1, dphi1 = eval_cell_basis(self.qp, xT, hT, k + 1, derivative=True)
        xTf, hTf = self.xT[:, None, None, :], self.hT[:, None, None]
        phif = eval_cell_basis(self.fqp, xTf, hTf, k)
        phif1 = eval_cell_basis(self.fqp, xTf, hTf, k + 1)
        self.psi = eval_face_basis(self.fqp, mesh.face_midpoints[fids][:, :, None, :],
                                   mesh.face_tangents[fids][:, :, None, :],
                                   mesh.face_measures[fids][:, :, None], k)

        M = gram(phi, self.qw)
        if space.orthonormal:
            try:
                L = np.linalg.cholesky(M)
            except np.linalg.LinAlgError as exc:
                raise ConditioningError("cell Gram matrix is not numerically SPD") from exc
            T = np.linalg.inv(L)
            self.transform = T
            phi = np.einsum("eab,eqb->eqa", T, phi)
            dphi = np.einsum("eab,eqbc->eqac", T, dphi)
            phif = np.einsum("eab,efqb->efqa", T, phif)
            M = gram(phi, self.qw)
        else:
            self.transform = None
        self.phi, self.dphi, self.phif = phi, dphi, phif
        self.M = M
        self.cell_mass = np.einsum("eq,eqa->ea", self.qw, phi)
        self.area = self.qw.sum(axis=1)

        # gradient: M g_j = B_j x
        n = normals
        B = np.zeros((ne, 2, nk, nls))
        for j in range(2):
            B[:, j, :, :nk] = (np.einsum("eq,eqa,eqb->eab", self.qw, phi, dphi[..., j])
                               - np.einsum("efq,efqa,efqb,ef->eab", self.fqw, phif, phif, n[..., j]))
            B[:, j, :, nk:] = np.einsum("efq,efqa,efqc,ef->eafc", self.fqw, phif, self.psi,
                                        n[..., j]).reshape(ne, nk, m * nf)
        self.B = B
        self.GS = cholesky_solve(M[:, None], B, "cell Gram")

        # potential: full-gradient Neumann problem with mean closure
        K = np.einsum("eq,eqac,eqbc->eab", self.qw, dphi1, dphi1)
        D = np.einsum("eq,eqac,eqb->ecab", self.qw, dphi1, phi)
        rhs = np.einsum("ecab,ecbl->eal", D, self.GS)
        R = np.zeros((ne, nk1, nls))
        R[:, 1:] = cholesky_solve(K[:, 1:, 1:], rhs[:, 1:], "reconstruction stiffness")
        mass1 = np.einsum("eq,eqa->ea", self.qw, phi1)
        R[:, 0, :nk] = self.cell_mass
        R[:, 0] -= np.einsum("ea,eal->el", mass1[:, 1:], R[:, 1:])
        R[:, 0] /= mass1[:, :1]
        self.R = R

        # boundary residual
        Mk1 = np.einsum("eq,eqa,eqb->eab", self.qw, phi, phi1)
        W = cholesky_solve(M, Mk1, "cell Gram") @ R
        W[:, :, :nk] -= np.eye(nk)
        trace = np.einsum("efqa,eal->efql", phif1, R) - np.einsum("efqa,eal->efql", phif, W)
        MF = gram(self.psi, self.fqw)
        proj = np.einsum("efq,efqc,efql->efcl", self.fqw, self.psi, trace)
        delta = cholesky_solve(MF, proj, "face Gram")
        for j in range(m):
            delta[:, j, :, nk + j * nf:nk + (j + 1) * nf] -= np.eye(nf)
        self.delta = delta / self.hT[:, None, None, None]

        # values at quadrature points
        self.Vq = np.zeros((ne, phi.shape[1], nls))
        self.Vq[..., :nk] = phi
        self.Gq = np.einsum("eqa,ejal->eqjl", phi, self.GS)
        self.Dq = np.einsum("efqc,efcl->efql", self.psi, self.delta)

    def gather(self, u: "HybridVelocity") -> np.ndarray:
        """Local unknowns ``(ne, 2, nls)``."""
        ne = len(self.ids)
        faces = u.face[self.faces].transpose(0, 2, 1, 3).reshape(ne, 2, -1)
        return np.concatenate([u.cell[self.ids], faces], axis=-1)

    def scatter(self, loc, cell_out, face_out):
        """Add local vectors ``(ne, 2, nls)`` into global cell/face arrays."""
        nk = cell_out.shape[-1]
        nf = face_out.shape[-1]
        ne = len(self.ids)
        cell_out[self.ids] += loc[..., :nk]
        np.add.at(face_out, self.faces, loc[..., nk:].reshape(ne, 2, self.m, nf).transpose(0, 2, 1, 3))

    def eval_cell(self, coeffs, points, ids_local, derivative=False):
        """Evaluate P^k cell polynomials of elements ``ids_local`` at points."""
        val = eval_cell_basis(points, self.xT[ids_local], self.hT[ids_local], self.k,
                              derivative=derivative)
        if self.transform is not None:
            T = self.transform[ids_local]
            if derivative:
                val = (np.einsum("...ab,...b->...a", T, val[0]),
                       np.einsum("...ab,...bc->...ac", T, val[1]))
            else:
                val = np.einsum("...ab,...b->...a", T, val)
        if derivative:
            return np.einsum("...a,...a->...", val[0], coeffs), np.einsum("...ac,...a->...c", val[1], coeffs)
        return np.einsum("...a,...a->...", val, coeffs)


class HHOSpace:
    """Discrete velocity/pressure spaces of degree ``k`` on ``mesh``.

    Parameters
    ----------
    mesh : Mesh
    k : int
        Polynomial degree, at least 1.
    quad_order : int, optional
        Quadrature exactness for every integral; defaults to ``2k + 4``.
    orthonormal : bool
        Use Gram-Cholesky orthonormalized cell bases instead of scaled
        monomials (default False). Coefficients then refer to that basis.
    """

    def __init__(self, mesh, k: int, quad_order: int | None = None, orthonormal: bool = False):
        if int(k) != k or k < 1:
            raise ValueError("k must be ≥ 1")
        self.mesh = mesh
        self.k = int(k)
        self.nk = dim_cell(self.k)
        self.nk1 = dim_cell(self.k + 1)
        self.nf = dim_face(self.k)
        self.quad_order = 2 * self.k + 4 if quad_order is None else int(quad_order)
        self.orthonormal = bool(orthonormal)
        self.groups = [ElementGroup(self, m) for m in sorted(mesh.groups())]
        self._where = np.empty((mesh.n_elements, 2), dtype=int)
        for gi, g in enumerate(self.groups):
            self._where[g.ids, 0] = gi
            self._where[g.ids, 1] = np.arange(len(g.ids))

    @property
    def n_velocity_dofs(self) -> int:
        return 2 * (self.mesh.n_elements * self.nk + self.mesh.n_faces * self.nf)

    def locate(self, e: int):
        gi, i = self._where[e]
        return self.groups[gi], int(i)

    def zero_velocity(self) -> "HybridVelocity":
        return HybridVelocity(self, np.zeros((self.mesh.n_elements, 2, self.nk)),
                              np.zeros((self.mesh.n_faces, 2, self.nf)))

    def random_velocity(self, rng, zero_boundary=False) -> "HybridVelocity":
        u = HybridVelocity(self, rng.standard_normal((self.mesh.n_elements, 2, self.nk)),
                           rng.standard_normal((self.mesh.n_faces, 2, self.nf)))
        if zero_boundary:
            u.face[self.mesh.boundary_face_ids] = 0.0
        return u

    def eval_cell_polynomial(self, coeffs, elements, points, derivative=False):
        """Evaluate per-element P^k coefficients ``coeffs[elements]`` at
        ``points`` (same leading shape as ``elements``)."""
        elements = np.asarray(elements)
        points = np.asarray(points, dtype=float)
        gi, li = self._where[elements, 0], self._where[elements, 1]
        out_v = np.zeros(coeffs.shape[1:-1] + elements.shape) if coeffs.ndim > 2 else np.zeros(elements.shape)
        out_g = np.zeros(out_v.shape + (2,))
        for g_index in np.unique(gi):
            g = self.groups[g_index]
            sel = gi == g_index
            c = coeffs[elements[sel]]                   # (n, [2,] nk)
            if c.ndim == 3:
                c = np.moveaxis(c, 1, 0)
            res = g.eval_cell(c, points[sel], li[sel], derivative)
            if derivative:
                out_v[..., sel] = res[0]
                out_g[..., sel, :] = res[1]
            else:
                out_v[..., sel] = res
        return (out_v, out_g) if derivative else out_v


@dataclass
class HybridVelocity:
    """Cell coefficients ``cell[e, i, a]`` and face coefficients ``face[f, i, c]``."""

    space: HHOSpace
    cell: np.ndarray
    face: np.ndarray

    def __post_init__(self):
        sp = self.space
        if self.cell.shape != (sp.mesh.n_elements, 2, sp.nk) or self.face.shape != (sp.mesh.n_faces, 2, sp.nf):
            raise ValueError("coefficient blocks do not match the space dimensions")

    def copy(self):
        return HybridVelocity(self.space, self.cell.copy(), self.face.copy())

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.cell.ravel(), self.face.ravel()])

    @classmethod
    def from_vector(cls, space, vec):
        n = space.mesh.n_elements * 2 * space.nk
        return cls(space, vec[:n].reshape(-1, 2, space.nk).copy(), vec[n:].reshape(-1, 2, space.nf).copy())

    def is_zero_boundary(self) -> bool:
        return not np.any(self.face[self.space.mesh.boundary_face_ids])

    def __add__(self, other):
        return HybridVelocity(self.space, self.cell + other.cell, self.face + other.face)

    def __sub__(self, other):
        return HybridVelocity(self.space, self.cell - other.cell, self.face - other.face)

    def __mul__(self, alpha):
        return HybridVelocity(self.space, alpha * self.cell, alpha * self.face)

    __rmul__ = __mul__


@dataclass
class BrokenPressure:
    """Per-element P^k coefficients ``coeffs[e, a]``."""

    space: HHOSpace
    coeffs: np.ndarray
    zero_mean: bool = False

    def __post_init__(self):
        if self.coeffs.shape != (self.space.mesh.n_elements, self.space.nk):
            raise ValueError("pressure coefficients do not match the space dimensions")
        if self.zero_mean:
            scale = max(1.0, np.abs(self.coeffs).max(initial=0.0)) * self.space.mesh.areas.sum()
            if abs(self.integral()) > 1e-12 * scale:
                raise ValueError("pressure flagged zero-mean has nonzero integral")

    def integral(self) -> float:
        return float(sum(np.sum(g.cell_mass * self.coeffs[g.ids]) for g in self.space.groups))

    def with_zero_mean(self) -> "BrokenPressure":
        """Subtract the mean value."""
        c = self.coeffs.copy()
        mean = self.integral() / self.space.mesh.areas.sum()
        for g in self.space.groups:
            # the constant function in the cell basis
            one = cholesky_solve(g.M, g.cell_mass[..., None])[..., 0]
            c[g.ids] -= mean * one
        return BrokenPressure(self.space, c, zero_mean=True)


# -- interpolation ----------------------------------------------------------


def _as_values(fq, shape):
    fq = np.asarray(fq, dtype=float)
    return np.broadcast_to(fq, shape) if fq.shape != shape else fq


def interpolate(u, space: HHOSpace) -> HybridVelocity:
    """Cell and face L2 projections of the vector field ``u``.

    ``u`` maps points ``(..., 2)`` to values ``(..., 2)``.
    """
    mesh = space.mesh
    out = space.zero_velocity()
    for g in space.groups:
        uq = _as_values(u(g.qp), g.qp.shape)
        mom = np.einsum("eq,eqa,eqi->eia", g.qw, g.phi, uq)
        out.cell[g.ids] = cholesky_solve(g.M[:, None], mom[..., None], "cell Gram")[..., 0]
    a = mesh.vertices[mesh.face_vertices[:, 0]]
    b = mesh.vertices[mesh.face_vertices[:, 1]]
    pts, wts = face_rule_batch(a, b, space.quad_order)
    psi = eval_face_basis(pts, mesh.face_midpoints[:, None], mesh.face_tangents[:, None],
                          mesh.face_measures[:, None], space.k)
    uq = _as_values(u(pts), pts.shape)
    mom = np.einsum("fq,fqc,fqi->fic", wts, psi, uq)
    out.face[:] = cholesky_solve(gram(psi, wts)[:, None], mom[..., None], "face Gram")[..., 0]
    return out


def project_pressure(p, space: HHOSpace) -> BrokenPressure:
    """Element-wise L2 projection of the scalar field ``p``."""
    c = np.zeros((space.mesh.n_elements, space.nk))
    for g in space.groups:
        pq = _as_values(p(g.qp), g.qp.shape[:-1])
        mom = np.einsum("eq,eqa,eq->ea", g.qw, g.phi, pq)
        c[g.ids] = cholesky_solve(g.M, mom[..., None], "cell Gram")[..., 0]
    return BrokenPressure(space, c)


# -- per-element operator matrices ------------------------------------------


@dataclass(frozen=True)
class LocalOperators:
    """Matrices acting on the flattened local vector ``x.reshape(2 * nls)``.

    gradient : (2, 2, nk, 2 nls), ``G[i, j]`` are the P^k coefficients of
        the (i, j) entry (derivative of component i along x_j).
    sym_gradient : (2, 2, nk, 2 nls)
    divergence : (nk, 2 nls)
    potential : (2, nk1, 2 nls), in the scaled monomial basis of degree k+1.
    residual : (m, 2, k+1, 2 nls), face coefficients of the boundary residual.
    """

    element: int
    gradient: np.ndarray
    sym_gradient: np.ndarray
    divergence: np.ndarray
    potential: np.ndarray
    residual: np.ndarray


def _vectorize(op, nls):
    """Lift a scalar operator ``(..., nls)`` to both components:
    ``(2, ..., 2 nls)`` block diagonal."""
    out = np.zeros((2,) + op.shape[:-1] + (2 * nls,))
    out[0, ..., :nls] = op
    out[1, ..., nls:] = op
    return out


def local_operators(space: HHOSpace, e: int) -> LocalOperators:
    g, i = space.locate(e)
    nls = g.nls
    G = np.zeros((2, 2, space.nk, 2 * nls))
    for a in range(2):
        for b in range(2):
            G[a, b, :, a * nls:(a + 1) * nls] = g.GS[i, b]
    Gs = 0.5 * (G + G.transpose(1, 0, 2, 3))
    R = _vectorize(g.R[i], nls)
    delta = np.moveaxis(_vectorize(g.delta[i], nls), 0, 1)
    return LocalOperators(e, G, Gs, G[0, 0] + G[1, 1], R, delta)


def gradient_reconstruction(space: HHOSpace, e: int) -> np.ndarray:
    return local_operators(space, e).gradient


def potential_reconstruction(space: HHOSpace, e: int) -> np.ndarray:
    return local_operators(space, e).potential


def boundary_residual(space: HHOSpace, e: int) -> np.ndarray:
    return local_operators(space, e).residual


# -- values at quadrature points --------------------------------------------


def gradient_values(g: ElementGroup, x) -> np.ndarray:
    """G_T x at cell quadrature points, ``(ne, nq, 2, 2)`` with [i, j] = d_j u_i."""
    return np.einsum("eqjl,eil->eqij", g.Gq, x)


def cell_values(g: ElementGroup, x) -> np.ndarray:
    return np.einsum("eql,eil->eqi", g.Vq, x)


def residual_values(g: ElementGroup, x) -> np.ndarray:
    """Boundary residual at face quadrature points, ``(ne, m, nqf, 2)``."""
    return np.einsum("efql,eil->efqi", g.Dq, x)


def sym(t):
    return 0.5 * (t + np.swapaxes(t, -1, -2))


# -- norms ------------------------------------------------------------------


def _norm(v: HybridVelocity, m: float, symmetric: bool) -> float:
    if not m > 1.0:
        raise ValueError("exponent must exceed 1")
    space = v.space
    hF = space.mesh.face_measures
    total = 0.0
    for g in space.groups:
        x = g.gather(v)
        xc = x[..., :space.nk]
        grad = np.einsum("eqac,eia->eqic", g.dphi, xc)
        if symmetric:
            grad = sym(grad)
        total += np.sum(g.qw * np.linalg.norm(grad, axis=(-2, -1)) ** m)
        xf = x[..., space.nk:].reshape(len(g.ids), 2, g.m, space.nf)
        jump = np.einsum("efqc,eifc->efqi", g.psi, xf) - np.einsum("efqa,eia->efqi", g.phif, xc)
        total += np.sum(hF[g.faces][..., None] ** (1.0 - m) * g.fqw * np.linalg.norm(jump, axis=-1) ** m)
    return float(total ** (1.0 / m))


def norm_eps(v: HybridVelocity, m: float) -> float:
    """Discrete W^{1,m}-like norm built on the symmetric gradient of v_T."""
    return _norm(v, m, True)


def norm_1(v: HybridVelocity, m: float) -> float:
    """Same as :func:`norm_eps` with the full gradient."""
    return _norm(v, m, False)


def seminorm_residual(v: HybridVelocity, r: float) -> float:
    """``(sum_T h_T ||delta_dT v||_{L^r(dT)}^r)^(1/r)``."""
    total = 0.0
    for g in v.space.groups:
        d = np.linalg.norm(residual_values(g, g.gather(v)), axis=-1)
        total += np.sum(g.hT[:, None, None] * g.fqw * d ** r)
    return float(total ** (1.0 / r))


def gradient_norm(v: HybridVelocity, r: float, symmetric=False) -> float:
    """``||G_h v||_{L^r}`` (or of its symmetric part)."""
    total = 0.0
    for g in v.space.groups:
        G = gradient_values(g, g.gather(v))
        if symmetric:
            G = sym(G)
        total += np.sum(g.qw * np.linalg.norm(G, axis=(-2, -1)) ** r)
    return float(total ** (1.0 / r))


def gradient_error(v: HybridVelocity, grad, r: float) -> float:
    """``||G_h v - grad||_{L^r}`` for a callable ``grad`` returning ``(..., 2, 2)``."""
    total = 0.0
    for g in v.space.groups:
        G = gradient_values(g, g.gather(v)) - grad(g.qp)
        total += np.sum(g.qw * np.linalg.norm(G, axis=(-2, -1)) ** r)
    return float(total ** (1.0 / r))
