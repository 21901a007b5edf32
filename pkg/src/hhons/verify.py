"""Manufactured solution, errors in the discrete norms and rate fitting."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .forms import FluidLaws
from .hho import HHOSpace, HybridVelocity, BrokenPressure, interpolate, norm_eps, project_pressure
from .laws import CarreauYasuda, LaplaceConvection, conjugate
from .mesh import build_cartesian, build_triangular
from .solver import PicardConfig, picard_solve

HALF_PI = 0.5 * np.pi


class ExactSolution:
    """``u = (sin(pi x2/2), sin(pi x1/2))``, ``p = sin(pi x1/2) sin(pi x2/2) - 4/pi^2``.

    Derivative conventions: ``grad_u[..., i, j] = d_j u_i`` and
    ``hess_u[..., i, j, k] = d_j d_k u_i``.
    """

    d = 2

    @staticmethod
    def u(x):
        x = np.asarray(x, dtype=float)
        return np.stack([np.sin(HALF_PI * x[..., 1]), np.sin(HALF_PI * x[..., 0])], axis=-1)

    @staticmethod
    def grad_u(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 1] = HALF_PI * np.cos(HALF_PI * x[..., 1])
        out[..., 1, 0] = HALF_PI * np.cos(HALF_PI * x[..., 0])
        return out

    @staticmethod
    def hess_u(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (2, 2, 2))
        out[..., 0, 1, 1] = -HALF_PI ** 2 * np.sin(HALF_PI * x[..., 1])
        out[..., 1, 0, 0] = -HALF_PI ** 2 * np.sin(HALF_PI * x[..., 0])
        return out

    @staticmethod
    def p(x):
        x = np.asarray(x, dtype=float)
        return np.sin(HALF_PI * x[..., 0]) * np.sin(HALF_PI * x[..., 1]) - 4.0 / np.pi ** 2

    @staticmethod
    def grad_p(x):
        x = np.asarray(x, dtype=float)
        s0, s1 = np.sin(HALF_PI * x[..., 0]), np.sin(HALF_PI * x[..., 1])
        c0, c1 = np.cos(HALF_PI * x[..., 0]), np.cos(HALF_PI * x[..., 1])
        return HALF_PI * np.stack([c0 * s1, s0 * c1], axis=-1)


def exact_fields(d: int = 2) -> ExactSolution:
    if d != 2:
        raise ValueError("only the two-dimensional manufactured solution is available")
    return ExactSolution()


def source_term(x, laws: FluidLaws, exact: ExactSolution | None = None):
    """``f = -div sigma(grad_s u) + (u . grad) chi(u) + grad p`` by the chain rule."""
    ex = exact or ExactSolution()
    x = np.asarray(x, dtype=float)
    u, G, H = ex.u(x), ex.grad_u(x), ex.hess_u(x)
    Gs = 0.5 * (G + np.swapaxes(G, -1, -2))
    J = laws.stress.jacobian(Gs)
    # d_j (grad_s u)_kl
    dGs = 0.5 * (H + np.swapaxes(H, -3, -2))            # [k, l, j]
    div_sigma = np.einsum("...ijkl,...klj->...i", J, dGs)
    adv = np.einsum("...ij,...j->...i", G, u)             # (u . grad) u
    n = np.linalg.norm(u, axis=-1)
    nz = n > 0
    safe = np.where(nz[..., None], u, 1.0)
    conv = np.einsum("...ij,...j->...i", laws.convection.jacobian(safe), adv) * nz[..., None]
    return -div_sigma + conv + ex.grad_p(x)


# -- errors -----------------------------------------------------------------


@dataclass
class ErrorRecord:
    h: float
    err_u: float
    err_p: float
    rel_u: float = math.nan
    rel_p: float = math.nan
    picard_iters: int = 0
    converged: bool = True


def lebesgue_norm(p: BrokenPressure, m: float) -> float:
    """``||p||_{L^m}`` by element quadrature."""
    total = 0.0
    for g in p.space.groups:
        vals = np.einsum("eqa,ea->eq", g.phi, p.coeffs[g.ids])
        total += np.sum(g.qw * np.abs(vals) ** m)
    return float(total ** (1.0 / m))


def compute_errors(u_h: HybridVelocity, p_h: BrokenPressure, exact: ExactSolution, r: float,
                   picard_iters: int = 0, converged: bool = True) -> ErrorRecord:
    """``||u_h - I_h u||_{eps,r,h}`` and ``||p_h - pi_h p||_{L^r'}``."""
    space = u_h.space
    Iu = interpolate(exact.u, space)
    pp = project_pressure(exact.p, space)
    eu = norm_eps(u_h - Iu, r)
    ep = lebesgue_norm(BrokenPressure(space, p_h.coeffs - pp.coeffs), conjugate(r))
    nu = norm_eps(Iu, r)
    npp = lebesgue_norm(pp, conjugate(r))
    return ErrorRecord(space.mesh.h, eu, ep, eu / nu if nu else math.nan, ep / npp if npp else math.nan,
                       picard_iters, converged)


def fit_rates(h, err):
    """Observed orders ``log(e_i/e_{i+1}) / log(h_i/h_{i+1})``; NaN where an
    error vanishes."""
    h = np.asarray(h, dtype=float)
    err = np.asarray(err, dtype=float)
    if len(h) < 2:
        return np.array([])
    with np.errstate(divide="ignore", invalid="ignore"):
        rates = np.log(err[:-1] / err[1:]) / np.log(h[:-1] / h[1:])
    bad = (err[:-1] <= 0) | (err[1:] <= 0)
    return np.where(bad, np.nan, rates)


@dataclass
class RateTable:
    records: list = field(default_factory=list)

    def __post_init__(self):
        hs = [r.h for r in self.records]
        if any(b >= a for a, b in zip(hs, hs[1:])):
            raise ValueError("mesh sizes must be strictly decreasing")

    @property
    def h(self):
        return np.array([r.h for r in self.records])

    @property
    def rates_u(self):
        return fit_rates(self.h, [r.err_u for r in self.records])

    @property
    def rates_p(self):
        return fit_rates(self.h, [r.err_p for r in self.records])


# -- convergence studies ----------------------------------------------------


@dataclass
class ConvergenceConfig:
    r: float = 2.0
    s: float = 2.0
    delta: float = 1.0
    mu: float = 1.0
    nu: float = 1.0
    yasuda_a: float | None = None
    k: int = 1
    mesh: str = "triangular"
    levels: tuple = (8, 16, 32, 64)
    distortion: float = 0.3
    quad_order: int | None = None
    picard: PicardConfig = field(default_factory=PicardConfig)
    stab_scaling: float = 1.0

    def laws(self) -> FluidLaws:
        a = self.r if self.yasuda_a is None else self.yasuda_a
        return FluidLaws(CarreauYasuda(self.mu, self.delta, a, self.r), LaplaceConvection(self.nu, self.s),
                         self.stab_scaling)

    def build_mesh(self, n):
        if self.mesh == "triangular":
            return build_triangular(n, self.distortion)
        if self.mesh == "cartesian":
            return build_cartesian(n, n)
        raise ValueError(f"unknown mesh family {self.mesh!r}")


def solve_manufactured(mesh, config: ConvergenceConfig, condense=True):
    """One manufactured solve; returns ``(u_h, p_h, report, space)``."""
    laws = config.laws()
    space = HHOSpace(mesh, config.k, config.quad_order)
    ex = ExactSolution()
    u, p, rep = picard_solve(mesh, config.k, laws, lambda x: source_term(x, laws, ex), ex.u,
                             config.picard, space=space, condense=condense)
    return u, p, rep, space


def run_convergence(config: ConvergenceConfig, on_level=None) -> RateTable:
    """Solve on every level and collect the errors; ``on_level(record,
    report)`` is called after each level."""
    ex = ExactSolution()
    records = []
    for n in config.levels:
        mesh = config.build_mesh(n)
        u, p, rep, _ = solve_manufactured(mesh, config)
        rec = compute_errors(u, p, ex, config.r, rep.iterations, rep.converged)
        records.append(rec)
        if on_level is not None:
            on_level(rec, rep)
    return RateTable(records)
