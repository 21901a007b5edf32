"""Global system layout, assembly, static condensation and Picard iteration.

Global unknowns are ordered as interior face velocities, cell velocities
(only without condensation), pressures and one Lagrange multiplier for the
zero-mean pressure constraint. Boundary face values are prescribed and
moved to the right-hand side.
"""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
from scipy.sparse.linalg import splu

from .basis import cholesky_solve, eval_face_basis, face_rule_batch, gram
from .forms import FluidLaws, initial_viscosity, local_matrices
from .hho import BrokenPressure, HHOSpace, HybridVelocity
from .laws import condition_report

log = logging.getLogger(__name__)


class CondensationError(np.linalg.LinAlgError):
    def __init__(self, element):
        self.element = element
        super().__init__(f"singular cell block in element {element}")


class SolverError(RuntimeError):
    pass


# -- layout -----------------------------------------------------------------


@dataclass
class SystemLayout:
    space: HHOSpace
    condense: bool
    interior_index: np.ndarray      # face id -> interior number or -1
    n_face: int
    n_cell: int
    n_pressure: int

    @property
    def face_offset(self):
        return 0

    @property
    def cell_offset(self):
        return self.n_face

    @property
    def pressure_offset(self):
        return self.n_face + self.n_cell

    @property
    def multiplier(self):
        return self.pressure_offset + self.n_pressure

    @property
    def size(self):
        return self.multiplier + 1

    def dof_counts(self):
        return {"face_velocity": self.n_face, "cell_velocity": self.n_cell, "pressure": self.n_pressure,
                "multiplier": 1, "total": self.size}

    def local_velocity_map(self, g):
        """Global indices ``(ne, 2 nls)`` of local velocity unknowns; -1 for
        boundary faces and for condensed cell unknowns."""
        sp = self.space
        nk, nf, ne = sp.nk, sp.nf, len(g.ids)
        out = -np.ones((ne, 2, g.nls), dtype=int)
        if not self.condense:
            out[..., :nk] = (self.cell_offset + g.ids[:, None, None] * 2 * nk
                             + np.arange(2)[None, :, None] * nk + np.arange(nk))
        fi = self.interior_index[g.faces]                                # (ne, m)
        idx = (fi[:, None, :, None] * 2 * nf + np.arange(2)[None, :, None, None] * nf
               + np.arange(nf)[None, None, None, :])                      # (ne, 2, m, nf)
        idx = np.where(fi[:, None, :, None] >= 0, idx, -1)
        out[..., nk:] = idx.reshape(ne, 2, -1)
        return out.reshape(ne, -1)

    def local_pressure_map(self, g):
        nk = self.space.nk
        return self.pressure_offset + g.ids[:, None] * nk + np.arange(nk)


def build_layout(space_or_mesh, k=None, condense=True) -> SystemLayout:
    space = space_or_mesh if isinstance(space_or_mesh, HHOSpace) else HHOSpace(space_or_mesh, k)
    mesh = space.mesh
    interior = mesh.interior_face_ids
    index = -np.ones(mesh.n_faces, dtype=int)
    index[interior] = np.arange(len(interior))
    n_cell = 0 if condense else mesh.n_elements * 2 * space.nk
    return SystemLayout(space, condense, index, len(interior) * 2 * space.nf, n_cell,
                        mesh.n_elements * space.nk)


def face_velocity_dofs(mesh, k) -> int:
    """Interior-face velocity unknown count, ``|F_h^i| * 2 (k+1)``."""
    return len(mesh.interior_face_ids) * 2 * (k + 1)


# -- boundary data ----------------------------------------------------------


def apply_dirichlet(space: HHOSpace, g) -> np.ndarray:
    """Face coefficients ``(n_faces, 2, k+1)`` of the face projection of the
    boundary field ``g`` on boundary faces, zero elsewhere."""
    mesh = space.mesh
    out = np.zeros((mesh.n_faces, 2, space.nf))
    if g is None:
        return out
    bf = mesh.boundary_face_ids
    a = mesh.vertices[mesh.face_vertices[bf, 0]]
    b = mesh.vertices[mesh.face_vertices[bf, 1]]
    pts, wts = face_rule_batch(a, b, space.quad_order)
    psi = eval_face_basis(pts, mesh.face_midpoints[bf][:, None], mesh.face_tangents[bf][:, None],
                          mesh.face_measures[bf][:, None], space.k)
    gq = np.broadcast_to(np.asarray(g(pts), dtype=float), pts.shape)
    mom = np.einsum("fq,fqc,fqi->fic", wts, psi, gq)
    out[bf] = cholesky_solve(gram(psi, wts)[:, None], mom[..., None], "face Gram")[..., 0]
    return out


def lift(space: HHOSpace, boundary_faces) -> HybridVelocity:
    u = space.zero_velocity()
    u.face[:] = boundary_faces
    return u


# -- assembly ---------------------------------------------------------------


@dataclass
class _Condensed:
    """Per-group data needed to recover cell unknowns."""

    cell_idx: np.ndarray
    face_idx: np.ndarray
    XF: np.ndarray
    Xf: np.ndarray
    Xp: np.ndarray


def _solve_cells(Acc, rhs, ids):
    try:
        return np.linalg.solve(Acc, rhs)
    except np.linalg.LinAlgError:
        for n in range(len(Acc)):
            try:
                np.linalg.solve(Acc[n], rhs[n])
            except np.linalg.LinAlgError:
                raise CondensationError(int(ids[n])) from None
        raise


def assemble(layout: SystemLayout, systems, boundary_faces):
    """Sparse bordered saddle-point matrix and right-hand side.

    ``systems`` are the local blocks from :func:`forms.local_matrices`.
    Returns ``(matrix, rhs, recovery)`` where ``recovery`` is used by
    :func:`expand_solution` when condensing.
    """
    sp = layout.space
    nk = sp.nk
    rows, cols, vals = [], [], []
    rhs = np.zeros(layout.size)
    recovery = []
    for ls in systems:
        g = ls.group
        ne = len(g.ids)
        vmap = layout.local_velocity_map(g)
        pmap = layout.local_pressure_map(g)
        xD = np.zeros((ne, 2, g.nls))
        xD[..., nk:] = boundary_faces[g.faces].transpose(0, 2, 1, 3).reshape(ne, 2, -1)
        xD = xD.reshape(ne, -1)
        F = ls.F - np.einsum("eab,eb->ea", ls.A, xD)
        G = -np.einsum("eab,eb->ea", ls.B, xD)
        if layout.condense:
            ci = (np.arange(2)[:, None] * g.nls + np.arange(nk)).ravel()
            fi = (np.arange(2)[:, None] * g.nls + np.arange(nk, g.nls)).ravel()
            A, B = ls.A, ls.B
            Acc = A[:, ci][:, :, ci]
            Acf = A[:, ci][:, :, fi]
            Afc = A[:, fi][:, :, ci]
            Aff = A[:, fi][:, :, fi]
            Bc, Bf = B[:, :, ci], B[:, :, fi]
            X = _solve_cells(Acc, np.concatenate([Acf, np.swapaxes(Bc, 1, 2), F[:, ci, None]], axis=2), g.ids)
            nfl = len(fi)
            Xf, Xp, XF = X[:, :, :nfl], X[:, :, nfl:nfl + nk], X[:, :, -1]
            K = np.empty((ne, nfl + nk, nfl + nk))
            K[:, :nfl, :nfl] = Aff - Afc @ Xf
            K[:, :nfl, nfl:] = np.swapaxes(Bf, 1, 2) - Afc @ Xp
            K[:, nfl:, :nfl] = Bf - Bc @ Xf
            K[:, nfl:, nfl:] = -Bc @ Xp
            r = np.concatenate([F[:, fi] - np.einsum("eab,eb->ea", Afc, XF),
                                G - np.einsum("eab,eb->ea", Bc, XF)], axis=1)
            gmap = np.concatenate([vmap[:, fi], pmap], axis=1)
            recovery.append(_Condensed(ci, fi, XF, Xf, Xp))
        else:
            nv = ls.A.shape[1]
            K = np.zeros((ne, nv + nk, nv + nk))
            K[:, :nv, :nv] = ls.A
            K[:, :nv, nv:] = np.swapaxes(ls.B, 1, 2)
            K[:, nv:, :nv] = ls.B
            r = np.concatenate([F, G], axis=1)
            gmap = np.concatenate([vmap, pmap], axis=1)
        mask = (gmap[:, :, None] >= 0) & (gmap[:, None, :] >= 0)
        R = np.broadcast_to(gmap[:, :, None], K.shape)
        C = np.broadcast_to(gmap[:, None, :], K.shape)
        rows.append(R[mask])
        cols.append(C[mask])
        vals.append(K[mask])
        ok = gmap >= 0
        np.add.at(rhs, gmap[ok], r[ok])
        # zero-mean constraint
        rows += [pmap.ravel(), np.full(pmap.size, layout.multiplier)]
        cols += [np.full(pmap.size, layout.multiplier), pmap.ravel()]
        vals += [g.cell_mass.ravel(), g.cell_mass.ravel()]
    matrix = sps.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(layout.size, layout.size)).tocsc()
    return matrix, rhs, recovery


def expand_solution(layout: SystemLayout, systems, recovery, sol, boundary_faces):
    """Rebuild ``(velocity, pressure, multiplier)`` from a global solution."""
    sp = layout.space
    u = sp.zero_velocity()
    u.face[:] = boundary_faces
    fi = layout.interior_index >= 0
    u.face[fi] = sol[:layout.n_face].reshape(-1, 2, sp.nf)
    p = sol[layout.pressure_offset:layout.multiplier].reshape(-1, sp.nk)
    if layout.condense:
        for ls, rec in zip(systems, recovery):
            g = ls.group
            ne = len(g.ids)
            xf = u.face[g.faces].transpose(0, 2, 1, 3).reshape(ne, -1)
            xf = np.where(layout.local_velocity_map(g)[:, rec.face_idx] >= 0, xf, 0.0)
            xc = rec.XF - np.einsum("eab,eb->ea", rec.Xf, xf) - np.einsum("eab,eb->ea", rec.Xp, p[g.ids])
            u.cell[g.ids] = xc.reshape(ne, 2, sp.nk)
    else:
        u.cell[:] = sol[layout.cell_offset:layout.pressure_offset].reshape(-1, 2, sp.nk)
    return u, p, float(sol[layout.multiplier])


def nonlinear_residual(layout: SystemLayout, systems, u: HybridVelocity, p: np.ndarray, lam: float):
    """Residual of the full (uncondensed) nonlinear system, evaluated with
    the local blocks linearized at ``u`` itself."""
    sp = layout.space
    mesh = sp.mesh
    nk = sp.nk
    rc = np.zeros((mesh.n_elements, 2, nk))
    rf = np.zeros((mesh.n_faces, 2, sp.nf))
    rp = np.zeros((mesh.n_elements, nk))
    rl = 0.0
    for ls in systems:
        g = ls.group
        ne = len(g.ids)
        x = g.gather(u).reshape(ne, -1)
        pl = p[g.ids]
        rv = np.einsum("eab,eb->ea", ls.A, x) + np.einsum("eca,ec->ea", ls.B, pl) - ls.F
        g.scatter(rv.reshape(ne, 2, g.nls), rc, rf)
        rp[g.ids] = np.einsum("eca,ea->ec", ls.B, x) + lam * g.cell_mass
        rl += float(np.sum(g.cell_mass * pl))
    rf = rf[layout.interior_index >= 0]
    return np.concatenate([rf.ravel(), rc.ravel(), rp.ravel(), [rl]])


# -- linear solver ----------------------------------------------------------


def constant_pressure(layout: SystemLayout) -> np.ndarray:
    """Global vector of the unit constant pressure (zero velocity)."""
    sp = layout.space
    z = np.zeros(layout.multiplier)
    for g in sp.groups:
        pm = layout.local_pressure_map(g)
        z[pm] = np.linalg.solve(g.M, g.cell_mass[..., None])[..., 0]
    return z


def solve_bordered(layout: SystemLayout, matrix, rhs, linear_solver):
    """Solve the bordered system without factorizing its dense border.

    The constant pressure ``z`` spans both kernels of the unbordered block
    ``K``, so ``lam = z.b / z.c``. The compatible system ``K x = b - c lam``
    is solved with the first pressure unknown pinned, then ``x`` is shifted
    along ``z`` to meet the mean constraint.
    """
    n = layout.multiplier
    matrix = sps.csc_matrix(matrix)
    K = matrix[:n, :n]
    c = matrix[:n, n].toarray().ravel()
    z = constant_pressure(layout)
    lam = float(z @ rhs[:n]) / float(z @ c)
    b = rhs[:n] - c * lam
    pin = layout.pressure_offset
    keep = np.ones(n)
    keep[pin] = 0.0
    D = sps.diags(keep)
    K = (D @ K @ D + sps.csc_matrix(([1.0], ([pin], [pin])), shape=(n, n))).tocsc()
    b[pin] = 0.0
    x = linear_solver.solve(K, b)
    x = x + (rhs[n] - c @ x) / (c @ z) * z
    return np.concatenate([x, [lam]])


class LinearSolver:
    """Interface: ``solve(matrix, rhs) -> x``."""

    def solve(self, matrix, rhs):
        raise NotImplementedError


class SuperLUSolver(LinearSolver):
    """Sparse direct LU (SuperLU through scipy)."""

    def solve(self, matrix, rhs):
        try:
            lu = splu(sps.csc_matrix(matrix), permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SolverError(f"sparse LU failed: {exc}") from exc
        x = lu.solve(rhs)
        if not np.all(np.isfinite(x)):
            raise SolverError("sparse LU produced non-finite values")
        return x


# -- Picard iteration -------------------------------------------------------


@dataclass
class PicardConfig:
    tol: float = 1e-10
    max_iters: int = 200
    relaxation: float = 1.0
    min_relaxation: float = 0.125
    initial_guess: str = "stokes-linear"     # or "zero", "provided"
    anderson_depth: int = 5                  # 0 disables acceleration
    anderson_start: float = 1e-2             # relative residual below which mixing starts

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not 0 < self.relaxation <= 1:
            raise ValueError("relaxation must lie in (0, 1]")
        if self.anderson_depth < 0:
            raise ValueError("anderson_depth must be >= 0")
        if self.initial_guess not in ("stokes-linear", "zero", "provided"):
            raise ValueError(f"unknown initial guess {self.initial_guess!r}")


@dataclass
class SolveReport:
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    increment_history: list = field(default_factory=list)
    relaxation_history: list = field(default_factory=list)
    converged: bool = False
    dof_counts: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    residual_scale: float = 1.0


class _Timer:
    def __init__(self, report):
        self.t = report.timings

    def __call__(self, phase):
        timings = self.t

        class _Ctx:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                timings[phase] = timings.get(phase, 0.0) + time.perf_counter() - self.t0

        return _Ctx()


def picard_solve(mesh, k, laws: FluidLaws, f=None, g=None, config: PicardConfig | None = None, *,
                 space: HHOSpace | None = None, condense=True, initial=None,
                 linear_solver: LinearSolver | None = None):
    """Solve the discrete problem by Picard iteration.

    Returns ``(u, p, report)`` with ``u`` a :class:`HybridVelocity`, ``p`` a
    zero-mean :class:`BrokenPressure`. On non-convergence the iterate with the
    smallest residual is returned and ``report.converged`` is False.
    ``initial`` is a ``(u, p)`` pair used with ``initial_guess="provided"``.

    Each iteration solves one linearized system. Once the relative residual
    is below ``config.anderson_start``, the new iterate is Anderson-mixed
    with the previous ones; a mixed iterate that raises the residual is
    discarded for a backtracked relaxed step.
    """
    config = config or PicardConfig()
    space = space or HHOSpace(mesh, k)
    linear_solver = linear_solver or SuperLUSolver()
    rep = condition_report(laws.stress.r, laws.convection.s, 2, space.k)
    if not rep.consistency_ok:
        warnings.warn(f"s = {laws.convection.s} exceeds the consistency bound {rep.consistency_bound}",
                      stacklevel=2)
    layout = build_layout(space, condense=condense)
    report = SolveReport(dof_counts=layout.dof_counts())
    timer = _Timer(report)

    with timer("setup"):
        bfaces = apply_dirichlet(space, g)
        u_lift = lift(space, bfaces)

    def linear_step(systems):
        with timer("assemble"):
            matrix, rhs, rec = assemble(layout, systems, bfaces)
        with timer("solve"):
            sol = solve_bordered(layout, matrix, rhs, linear_solver)
        return expand_solution(layout, systems, rec, sol, bfaces)

    def evaluate(u, p, lam):
        with timer("local"):
            systems = local_matrices(space, laws, u, f)
        with timer("residual"):
            res = np.linalg.norm(nonlinear_residual(layout, systems, u, p, lam))
        return systems, res

    nE = space.mesh.n_elements
    _, scale = evaluate(u_lift, np.zeros((nE, space.nk)), 0.0)
    scale = scale if scale > 0 else 1.0
    report.residual_scale = scale

    if config.initial_guess == "stokes-linear":
        with timer("local"):
            systems0 = local_matrices(space, laws, u_lift, f, convection=False,
                                      linear_viscosity=initial_viscosity(laws))
        u, p, lam = linear_step(systems0)
    elif config.initial_guess == "provided":
        if initial is None:
            raise ValueError("initial_guess='provided' needs an initial (u, p)")
        u = initial[0].copy()
        u.face[space.mesh.boundary_face_ids] = bfaces[space.mesh.boundary_face_ids]
        p = np.array(initial[1].coeffs if isinstance(initial[1], BrokenPressure) else initial[1], dtype=float)
        lam = 0.0
    else:
        u, p, lam = u_lift.copy(), np.zeros((nE, space.nk)), 0.0

    systems, res = evaluate(u, p, lam)
    report.residual_history.append(res / scale)
    best = (res, u, p)
    theta = config.relaxation
    mixer = _Anderson(config.anderson_depth)
    for it in range(1, config.max_iters + 1):
        u_new, p_new, lam_new = linear_step(systems)
        x = _pack(u, p)
        mixed = mixer.mix(x, _pack(u_new, p_new) - x, theta)
        accepted = False
        if mixed is not None and res / scale < config.anderson_start:
            u_try, p_try = _unpack(space, mixed)
            sys_try, res_try = evaluate(u_try, p_try, lam_new)
            lam_try, step = lam_new, theta
            accepted = res_try <= res
            if not accepted:
                mixer.reset()
        if not accepted:
            step = theta
            while True:
                u_try = u + (u_new - u) * step
                p_try = p + step * (p_new - p)
                lam_try = lam + step * (lam_new - lam)
                sys_try, res_try = evaluate(u_try, p_try, lam_try)
                if res_try <= res or step <= config.min_relaxation:
                    break
                step = max(step / 2, config.min_relaxation)
        incr = np.linalg.norm((u_try - u).to_vector()) / max(np.linalg.norm(u_try.to_vector()), 1e-300)
        u, p, lam, systems, res = u_try, p_try, lam_try, sys_try, res_try
        theta = min(config.relaxation, 2 * step) if step == theta else step
        report.iterations = it
        report.residual_history.append(res / scale)
        report.increment_history.append(incr)
        report.relaxation_history.append(step)
        log.debug("picard %d: residual %.3e, increment %.3e, theta %g, mixed %s", it, res / scale, incr, step,
                  accepted)
        if res < best[0]:
            best = (res, u, p)
        if res / scale <= config.tol:
            report.converged = True
            break
    if not report.converged:
        _, u, p = best
    pressure = BrokenPressure(space, p)
    pressure = BrokenPressure(space, p, zero_mean=_zero_mean_ok(pressure))
    return u, pressure, report


def _pack(u: HybridVelocity, p: np.ndarray) -> np.ndarray:
    return np.concatenate([u.to_vector(), p.ravel()])


def _unpack(space: HHOSpace, x: np.ndarray):
    n = len(x) - space.mesh.n_elements * space.nk
    return HybridVelocity.from_vector(space, x[:n]), x[n:].reshape(-1, space.nk).copy()


class _Anderson:
    """Anderson mixing of the fixed-point map ``x -> x + f(x)``.

    ``mix`` returns None until two iterates are stored.
    """

    def __init__(self, depth: int):
        self.depth = depth
        self.reset()

    def reset(self):
        self.xs, self.fs = [], []

    def mix(self, x, f, theta):
        if self.depth == 0:
            return None
        self.xs.append(x)
        self.fs.append(f)
        self.xs, self.fs = self.xs[-self.depth - 1:], self.fs[-self.depth - 1:]
        if len(self.xs) < 2:
            return None
        dX = np.diff(np.array(self.xs), axis=0).T
        dF = np.diff(np.array(self.fs), axis=0).T
        gamma = np.linalg.lstsq(dF, f, rcond=1e-12)[0]
        return x + theta * f - (dX + theta * dF) @ gamma


def _zero_mean_ok(p: BrokenPressure) -> bool:
    scale = max(1.0, np.abs(p.coeffs).max(initial=0.0)) * p.space.mesh.areas.sum()
    return abs(p.integral()) <= 1e-12 * scale
