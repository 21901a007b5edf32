"""Scaled monomial bases, quadrature on polygons and segments, L2 projectors.

Cell bases are the monomials ``((x - x_T)/h_T)**alpha`` of total degree
``<= l`` ordered by increasing degree, so the degree-``l`` basis is a prefix
of the degree-``l+1`` one. Face bases are 1D monomials in the scaled
tangential coordinate ``((x - x_F) . t_F)/h_F``.

Element quadrature is exact up to the requested order:

* triangles use a collapsed (Duffy) Gauss-Jacobi x Gauss-Legendre rule,
* convex quadrilaterals use a bilinear map of a tensor Gauss rule,
* other polygons are fanned into triangles from the barycenter.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


class QuadratureError(ValueError):
    """Raised when an element cannot carry the requested quadrature."""


class ConditioningError(np.linalg.LinAlgError):
    """Raised when a local Gram or stiffness matrix is numerically singular."""


# -- polynomial spaces ------------------------------------------------------


def dim_cell(degree: int) -> int:
    return (degree + 1) * (degree + 2) // 2


def dim_face(degree: int) -> int:
    return degree + 1


@lru_cache(maxsize=None)
def monomial_exponents(degree: int) -> np.ndarray:
    """Exponents ``(a1, a2)`` of the 2D monomials of total degree <= degree."""
    exps = [(d - j, j) for d in range(degree + 1) for j in range(d + 1)]
    return np.array(exps, dtype=int)


def eval_cell_basis(points, center, diameter, degree, derivative=False):
    """Evaluate scaled monomials at ``points``.

    ``points`` has shape ``(..., 2)`` and ``center``/``diameter`` broadcast
    against its leading axes (``center`` with shape ``(..., 2)``). Returns
    values of shape ``(..., n)`` and, with ``derivative=True``, gradients of
    shape ``(..., n, 2)``.
    """
    points = np.asarray(points, dtype=float)
    center = np.asarray(center, dtype=float)
    diameter = np.asarray(diameter, dtype=float)[..., None]
    xi = (points - center) / diameter
    exps = monomial_exponents(degree)
    # powers[..., p, c] = xi_c ** p
    powers = xi[..., None, :] ** np.arange(degree + 1)[:, None]
    val = powers[..., exps[:, 0], 0] * powers[..., exps[:, 1], 1]
    if not derivative:
        return val
    a1, a2 = exps[:, 0], exps[:, 1]
    d1 = np.where(a1 > 0, a1 * powers[..., np.maximum(a1 - 1, 0), 0], 0.0) * powers[..., a2, 1]
    d2 = powers[..., a1, 0] * np.where(a2 > 0, a2 * powers[..., np.maximum(a2 - 1, 0), 1], 0.0)
    grad = np.stack([d1, d2], axis=-1) / diameter[..., None]
    return val, grad


def eval_face_basis(points, center, tangent, diameter, degree):
    """Evaluate the scaled 1D face monomials; returns shape ``(..., degree+1)``."""
    points = np.asarray(points, dtype=float)
    t = np.einsum("...c,...c->...", points - center, tangent) / np.asarray(diameter)
    return t[..., None] ** np.arange(degree + 1)


# -- quadrature -------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureRule:
    """Points and weights on one element or face."""

    points: np.ndarray
    weights: np.ndarray
    exactness_degree: int

    def integrate(self, values) -> float:
        return float(np.tensordot(self.weights, np.asarray(values), axes=(0, 0)))


@lru_cache(maxsize=None)
def gauss_legendre_01(order: int):
    """Gauss-Legendre on [0, 1] exact to ``order``."""
    m = max(1, (order + 2) // 2)
    x, w = roots_legendre(m)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def reference_triangle_rule(order: int):
    """Collapsed rule on {x, y >= 0, x + y <= 1}, exact to ``order``."""
    m = max(1, (order + 2) // 2)
    xj, wj = roots_jacobi(m, 1.0, 0.0)
    u = 0.5 * (xj + 1.0)
    wu = 0.25 * wj
    v, wv = gauss_legendre_01(order)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    pts = np.stack([uu.ravel(), ((1.0 - uu) * vv).ravel()], axis=-1)
    wts = np.outer(wu, wv).ravel()
    return pts, wts


@lru_cache(maxsize=None)
def reference_square_rule(order: int):
    """Tensor Gauss rule on [0,1]^2 exact to degree ``order`` in each variable."""
    x, w = gauss_legendre_01(order)
    xx, yy = np.meshgrid(x, x, indexing="ij")
    return np.stack([xx.ravel(), yy.ravel()], axis=-1), np.outer(w, w).ravel()


def triangle_rule(vertices, order):
    """Quadrature on a batch of triangles ``vertices`` of shape ``(n, 3, 2)``."""
    ref, w = reference_triangle_rule(order)
    v0 = vertices[:, 0, None, :]
    e1 = vertices[:, 1, None, :] - v0
    e2 = vertices[:, 2, None, :] - v0
    pts = v0 + ref[None, :, 0, None] * e1 + ref[None, :, 1, None] * e2
    det = e1[:, 0, 0] * e2[:, 0, 1] - e1[:, 0, 1] * e2[:, 0, 0]
    return pts, np.abs(det)[:, None] * w[None, :], det


def quadrilateral_rule(vertices, order):
    """Bilinear-mapped tensor rule on convex quads ``(n, 4, 2)`` (CCW)."""
    # the bilinear Jacobian adds one degree per variable
    ref, w = reference_square_rule(order + 1)
    s, t = ref[:, 0], ref[:, 1]
    shp = np.stack([(1 - s) * (1 - t), s * (1 - t), s * t, (1 - s) * t], axis=-1)
    ds = np.stack([-(1 - t), 1 - t, t, -t], axis=-1)
    dt = np.stack([-(1 - s), -s, s, 1 - s], axis=-1)
    pts = np.einsum("qa,nac->nqc", shp, vertices)
    js = np.einsum("qa,nac->nqc", ds, vertices)
    jt = np.einsum("qa,nac->nqc", dt, vertices)
    det = js[..., 0] * jt[..., 1] - js[..., 1] * jt[..., 0]
    return pts, det * w[None, :], det


def polygon_rule(vertices, center, order):
    """Fan rule on polygons ``(n, m, 2)`` from ``center`` ``(n, 2)``.

    Raises :class:`QuadratureError` if some polygon is not star-shaped with
    respect to its center.
    """
    n, m, _ = vertices.shape
    tri = np.empty((n, m, 3, 2))
    tri[:, :, 0] = center[:, None, :]
    tri[:, :, 1] = vertices
    tri[:, :, 2] = np.roll(vertices, -1, axis=1)
    pts, wts, det = triangle_rule(tri.reshape(n * m, 3, 2), order)
    if np.any(det <= 0.0):
        bad = np.unique(np.nonzero(det.reshape(n, m) <= 0.0)[0])
        raise QuadratureError(f"polygons {bad.tolist()} are not star-shaped w.r.t. their barycenter")
    nq = pts.shape[1]
    return pts.reshape(n, m * nq, 2), wts.reshape(n, m * nq)


def element_rule_batch(vertices, center, order):
    """Quadrature points ``(n, nq, 2)`` and weights ``(n, nq)`` for polygons
    sharing the same vertex count."""
    vertices = np.asarray(vertices, dtype=float)
    nv = vertices.shape[1]
    if order < 0:
        raise ValueError("quadrature order must be >= 0")
    if nv == 3:
        pts, wts, det = triangle_rule(vertices, order)
        if np.any(det <= 0.0):
            raise QuadratureError("degenerate or clockwise triangle")
        return pts, wts
    if nv == 4 and _convex(vertices):
        pts, wts, det = quadrilateral_rule(vertices, order)
        if np.all(det > 0.0):
            return pts, wts
    return polygon_rule(vertices, np.asarray(center, dtype=float), order)


def _convex(vertices) -> bool:
    e = np.roll(vertices, -1, axis=1) - vertices
    en = np.roll(e, -1, axis=1)
    cross = e[..., 0] * en[..., 1] - e[..., 1] * en[..., 0]
    return bool(np.all(cross > 0.0))


def face_rule_batch(a, b, order):
    """Gauss-Legendre points ``(..., nq, 2)`` and weights on segments ``[a, b]``."""
    x, w = gauss_legendre_01(order)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    pts = a[..., None, :] + x[:, None] * (b - a)[..., None, :]
    length = np.linalg.norm(b - a, axis=-1)
    return pts, length[..., None] * w


def element_quadrature(mesh, element: int, order: int) -> QuadratureRule:
    """Quadrature rule on a single element of ``mesh``."""
    verts = mesh.vertices[mesh.element_vertices(element)][None]
    pts, wts = element_rule_batch(verts, mesh.barycenters[element][None], order)
    return QuadratureRule(pts[0], wts[0], order)


def face_quadrature(mesh, face: int, order: int) -> QuadratureRule:
    a, b = mesh.vertices[mesh.face_vertices[face]]
    pts, wts = face_rule_batch(a, b, order)
    return QuadratureRule(pts, wts, order)


# -- projections ------------------------------------------------------------


def gram(values, weights):
    """Batched Gram matrices ``sum_q w_q phi_i phi_j`` from values ``(..., nq, n)``."""
    return np.einsum("...q,...qi,...qj->...ij", weights, values, values)


def cholesky_solve(matrix, rhs, what="Gram"):
    """Solve SPD systems (batched) by Cholesky, raising on loss of definiteness."""
    try:
        chol = np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError(f"{what} matrix is not numerically SPD") from exc
    y = np.linalg.solve(chol, rhs)
    return np.linalg.solve(np.swapaxes(chol, -1, -2), y)


def l2_project(f, mesh, kind, index, degree, quad_order=None):
    """Coefficients of the L2 projection of scalar ``f`` on P^degree(X).

    ``kind`` is ``"element"`` or ``"face"``. ``f`` maps points of shape
    ``(..., 2)`` to values of shape ``(...)``.
    """
    quad_order = 2 * degree + 4 if quad_order is None else quad_order
    if kind == "element":
        rule = element_quadrature(mesh, index, quad_order)
        phi = eval_cell_basis(rule.points, mesh.barycenters[index], mesh.element_diameters[index], degree)
    elif kind == "face":
        rule = face_quadrature(mesh, index, quad_order)
        phi = eval_face_basis(rule.points, mesh.face_midpoints[index], mesh.face_tangents[index],
                              mesh.face_diameters[index], degree)
    else:
        raise ValueError(f"unknown support kind {kind!r}")
    fq = np.asarray(f(rule.points), dtype=float)
    moments = phi.T @ (rule.weights * fq)
    return cholesky_solve(gram(phi, rule.weights), moments)
