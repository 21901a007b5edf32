"""Discrete forms: viscous term with stabilization, convection, coupling, load.

Values are computed with the element quadrature of the space. The Picard
linearization at a state ``w`` freezes ``nu_eff(G_s w)``, the stabilization
weight, ``chi(w)`` and the direction ``w/|w|``; see :func:`local_matrices`.
Local matrices use the flattened vector layout ``i * nls + a``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hho import (BrokenPressure, ElementGroup, HHOSpace, HybridVelocity, cell_values,
                  gradient_values, residual_values, sym)
from .laws import CarreauYasuda, LaplaceConvection, conjugate


@dataclass(frozen=True)
class FluidLaws:
    """Stress and convection laws plus the stabilization scaling.

    The stabilization is multiplied by ``stab_scaling * stress.mu``.
    """

    stress: CarreauYasuda = field(default_factory=CarreauYasuda)
    convection: LaplaceConvection = field(default_factory=LaplaceConvection)
    stab_scaling: float = 1.0

    @property
    def stab_factor(self) -> float:
        return self.stab_scaling * self.stress.mu

    def stab_weight(self, d):
        """``(delta^r + |d|^r)^((r-2)/r)`` from the residual norm ``d``; set to
        0 where it would be infinite (delta = 0, d = 0, r < 2)."""
        law = self.stress
        r = law.r
        if r == 2:
            return np.ones_like(d)
        base = law.delta ** r + d ** r
        with np.errstate(divide="ignore"):
            out = base ** ((r - 2) / r)
        return np.where(np.isfinite(out), out, 0.0)


def singular_threshold(w_max: float) -> float:
    return 1e-13 * (1.0 + w_max)


def max_cell_value(w: HybridVelocity) -> float:
    return max(float(np.linalg.norm(cell_values(g, g.gather(w)), axis=-1).max()) for g in w.space.groups)


# -- values -----------------------------------------------------------------


def _check_space(*vs):
    sp = vs[0].space
    if any(v.space is not sp for v in vs):
        raise ValueError("arguments live on different spaces")
    return sp


def stabilization_value(laws: FluidLaws, w: HybridVelocity, v: HybridVelocity) -> float:
    sp = _check_space(w, v)
    total = 0.0
    for g in sp.groups:
        dw = residual_values(g, g.gather(w))
        dv = residual_values(g, g.gather(v))
        om = laws.stab_weight(np.linalg.norm(dw, axis=-1))
        total += np.sum(g.hT[:, None, None] * g.fqw * om * np.einsum("efqi,efqi->efq", dw, dv))
    return float(laws.stab_factor * total)


def consistent_viscous_value(laws: FluidLaws, w: HybridVelocity, v: HybridVelocity) -> float:
    """``int sigma(G_s w) : G_s v`` without stabilization."""
    sp = _check_space(w, v)
    total = 0.0
    for g in sp.groups:
        Gw = sym(gradient_values(g, g.gather(w)))
        Gv = sym(gradient_values(g, g.gather(v)))
        total += np.sum(g.qw * np.einsum("eqij,eqij->eq", laws.stress.stress(Gw), Gv))
    return float(total)


def viscous_value(laws: FluidLaws, w: HybridVelocity, v: HybridVelocity) -> float:
    """Viscous form including the stabilization."""
    return consistent_viscous_value(laws, w, v) + stabilization_value(laws, w, v)


def convective_terms(laws: FluidLaws, w: HybridVelocity, v: HybridVelocity):
    """The three integrals of the convective form, returned separately."""
    sp = _check_space(w, v)
    s = laws.convection.s
    eps = singular_threshold(max_cell_value(w))
    t = np.zeros(3)
    for g in sp.groups:
        xw, xv = g.gather(w), g.gather(v)
        wq, vq = cell_values(g, xw), cell_values(g, xv)
        Gw, Gv = gradient_values(g, xw), gradient_values(g, xv)
        chi = laws.convection(wq)
        Gw_chi = np.einsum("eqij,eqj->eqi", Gw, chi)
        n2 = np.einsum("eqi,eqi->eq", wq, wq)
        ratio = np.where(np.sqrt(n2) > eps, np.einsum("eqi,eqi->eq", vq, wq) / np.where(n2 > 0, n2, 1.0), 0.0)
        t[0] += np.sum(g.qw * np.einsum("eqi,eqi->eq", vq, Gw_chi))
        t[1] += np.sum(g.qw * ratio * np.einsum("eqi,eqi->eq", wq, Gw_chi))
        t[2] += np.sum(g.qw * np.einsum("eqi,eqij,eqj->eq", wq, Gv, chi))
    return np.array([t[0] / s, (s - 2) / s * t[1], -t[2] / conjugate(s)])


def convective_value(laws: FluidLaws, w: HybridVelocity, v: HybridVelocity) -> float:
    return float(np.sum(convective_terms(laws, w, v)))


def coupling_value(v: HybridVelocity, q: BrokenPressure) -> float:
    """``-int D_h v q``."""
    sp = v.space
    total = 0.0
    for g in sp.groups:
        x = g.gather(v)
        # D = tr G, and M GS_j = B_j
        total -= np.einsum("ea,ea->", q.coeffs[g.ids], np.einsum("eial,eil->ea", g.B, x))
    return float(total)


def load_value(f, v: HybridVelocity) -> float:
    """``sum_T int_T f . v_T``; ``f`` maps points ``(..., 2)`` to ``(..., 2)``."""
    total = 0.0
    for g in v.space.groups:
        fq = np.broadcast_to(np.asarray(f(g.qp), dtype=float), g.qp.shape)
        total += np.sum(g.qw[..., None] * fq * cell_values(g, g.gather(v)))
    return float(total)


# -- local matrices ---------------------------------------------------------


@dataclass
class LocalSystem:
    """Batched local blocks of one element group.

    A : (ne, 2 nls, 2 nls) velocity block (test rows, trial columns).
    B : (ne, nk, 2 nls) coupling block, ``q^T B v = b_h(v, q)`` locally.
    F : (ne, 2 nls) load vector.
    """

    group: ElementGroup
    A: np.ndarray
    B: np.ndarray
    F: np.ndarray


def coupling_matrix(g: ElementGroup) -> np.ndarray:
    ne, _, nk, nls = g.B.shape
    out = np.zeros((ne, nk, 2 * nls))
    out[..., :nls] = -g.B[:, 0]
    out[..., nls:] = -g.B[:, 1]
    return out


def load_vector(g: ElementGroup, f) -> np.ndarray:
    ne, nq, nls = g.Vq.shape
    if f is None:
        return np.zeros((ne, 2 * nls))
    fq = np.broadcast_to(np.asarray(f(g.qp), dtype=float), g.qp.shape)
    return np.einsum("eq,eqi,eqa->eia", g.qw, fq, g.Vq).reshape(ne, 2 * nls)


def _blockdiag(m):
    ne, n, _ = m.shape
    out = np.zeros((ne, 2 * n, 2 * n))
    out[:, :n, :n] = m
    out[:, n:, n:] = m
    return out


def viscous_matrix(g: ElementGroup, nu) -> np.ndarray:
    """``int nu G_s u : G_s v`` for per-point weights ``nu`` ``(ne, nq)``."""
    ne, nq, _, nls = g.Gq.shape
    wn = g.qw * nu
    K1 = np.einsum("eq,eqjb,eqja->eba", wn, g.Gq, g.Gq)
    A = 0.5 * _blockdiag(K1)
    for jt in range(2):
        for it in range(2):
            A[:, jt * nls:(jt + 1) * nls, it * nls:(it + 1) * nls] += 0.5 * np.einsum(
                "eq,eqb,eqa->eba", wn, g.Gq[:, :, it], g.Gq[:, :, jt])
    return A


def stabilization_matrix(g: ElementGroup, weight) -> np.ndarray:
    """``sum_F h_T int_F weight du . dv`` for weights ``(ne, m, nqf)``."""
    S = np.einsum("e,efq,efqb,efqa->eba", g.hT, g.fqw * weight, g.Dq, g.Dq)
    return _blockdiag(S)


def convection_matrix(g: ElementGroup, laws: FluidLaws, x, eps) -> np.ndarray:
    """Picard-linearized convective block at local state ``x``."""
    s = laws.convection.s
    ne, nq, nls = g.Vq.shape
    wq = np.einsum("eql,eil->eqi", g.Vq, x)
    chi = laws.convection(wq)
    C = np.einsum("eqj,eqjl->eql", chi, g.Gq)
    T1 = np.einsum("eq,eqb,eqa->eba", g.qw, g.Vq, C)
    A = _blockdiag((T1 - (s - 1) * T1.transpose(0, 2, 1)) / s)
    if s != 2:
        n2 = np.einsum("eqi,eqi->eq", wq, wq)
        inv = np.where(np.sqrt(n2) > eps, 1.0 / np.where(n2 > 0, n2, 1.0), 0.0)
        dirs = np.einsum("eqi,eqk,eq->eqik", wq, wq, inv)
        T2 = np.einsum("eq,eqik,eqb,eqa->eibka", g.qw, dirs, g.Vq, C).reshape(ne, 2 * nls, 2 * nls)
        A += (s - 2) / s * T2
    return A


def local_matrices(space: HHOSpace, laws: FluidLaws, state: HybridVelocity | None, f=None,
                   convection=True, linear_viscosity=None):
    """Picard-linearized local systems for every element group.

    With ``linear_viscosity`` set, the viscous and stabilization weights are
    replaced by that constant (used for the initial linear solve).
    """
    out = []
    if convection and state is not None and laws.convection.nu != 0:
        eps = singular_threshold(max_cell_value(state))
    else:
        convection = False
    for g in space.groups:
        ne = len(g.ids)
        x = g.gather(state) if state is not None else np.zeros((ne, 2, g.nls))
        if linear_viscosity is not None:
            nu = np.full(g.qw.shape, float(linear_viscosity))
            om = np.full(g.fqw.shape, linear_viscosity / laws.stress.mu)
        else:
            nu = laws.stress.viscosity(sym(gradient_values(g, x)))
            nu = np.where(np.isfinite(nu), nu, 0.0)
            om = laws.stab_weight(np.linalg.norm(residual_values(g, x), axis=-1))
        A = viscous_matrix(g, nu) + laws.stab_factor * stabilization_matrix(g, om)
        if convection:
            A += convection_matrix(g, laws, x, eps)
        out.append(LocalSystem(g, A, coupling_matrix(g), load_vector(g, f)))
    return out


def linearized_local_system(space: HHOSpace, laws: FluidLaws, state: HybridVelocity, e: int, f=None):
    """Local ``(A, B, F)`` of element ``e`` linearized at ``state``."""
    g, i = space.locate(e)
    full = local_matrices(space, laws, state, f)
    ls = next(ls for ls in full if ls.group is g)
    return ls.A[i], ls.B[i], ls.F[i]


def initial_viscosity(laws: FluidLaws) -> float:
    """Viscosity of the linear problem used as initial guess."""
    law = laws.stress
    if law.r == 2 or law.delta == 0:
        return law.mu
    return law.mu * law.delta ** (law.r - 2)


def apply_local(systems, u: HybridVelocity):
    """Per-group local products ``A x`` at the local unknowns of ``u``."""
    return [np.einsum("eab,eb->ea", ls.A, ls.group.gather(u).reshape(len(ls.group.ids), -1)) for ls in systems]
