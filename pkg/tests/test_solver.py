import warnings

import numpy as np
import pytest

from hhons.forms import FluidLaws, coupling_value, local_matrices
from hhons.hho import BrokenPressure, HHOSpace, interpolate, project_pressure
from hhons.laws import CarreauYasuda, LaplaceConvection
from hhons.mesh import build_cartesian, build_triangular
from hhons.solver import (PicardConfig, SuperLUSolver, _Anderson, apply_dirichlet, assemble, build_layout,
                          face_velocity_dofs, picard_solve, solve_bordered)
from hhons.verify import ExactSolution, source_term

STOKES = FluidLaws(CarreauYasuda(mu=1.0), LaplaceConvection(nu=0.0))


def stokes_polynomial():
    u = lambda x: np.stack([x[..., 1], x[..., 0]], axis=-1)
    p = lambda x: x[..., 0] - 0.5
    f = lambda x: np.broadcast_to(np.array([1.0, 0.0]), x.shape)
    return u, p, f


@pytest.mark.parametrize("mesh", [build_cartesian(3, 3), build_triangular(3, 0.3)], ids=["cart", "tri"])
@pytest.mark.parametrize("condense", [True, False])
def test_stokes_polynomial_exact(mesh, condense):
    u, p, f = stokes_polynomial()
    uh, ph, rep = picard_solve(mesh, 1, STOKES, f, u, condense=condense)
    assert rep.converged
    Iu, Pp = interpolate(u, uh.space), project_pressure(p, uh.space)
    assert np.abs((uh - Iu).to_vector()).max() <= 1e-8
    assert np.abs(ph.coeffs - Pp.coeffs).max() <= 1e-8


def test_bordered_solution_satisfies_full_system(rng):
    sp = HHOSpace(build_triangular(3, 0.3), 1)
    layout = build_layout(sp, condense=False)
    f = lambda x: np.sin(x)
    systems = local_matrices(sp, STOKES, None, f)
    bfaces = apply_dirichlet(sp, lambda x: np.stack([x[..., 1] ** 2, 0 * x[..., 0]], axis=-1))
    matrix, rhs, _ = assemble(layout, systems, bfaces)
    sol = solve_bordered(layout, matrix, rhs, SuperLUSolver())
    assert np.linalg.norm(matrix @ sol - rhs) <= 1e-10 * np.linalg.norm(rhs)


def test_condensed_and_full_agree():
    laws = FluidLaws(CarreauYasuda(r=1.8), LaplaceConvection(s=2.5))
    ex = ExactSolution()
    f = lambda x: source_term(x, laws, ex)
    mesh = build_triangular(4, 0.3)
    a = picard_solve(mesh, 1, laws, f, ex.u)
    b = picard_solve(mesh, 1, laws, f, ex.u, condense=False)
    assert a[2].converged and b[2].converged
    assert np.allclose(a[0].to_vector(), b[0].to_vector(), atol=1e-9)
    assert np.allclose(a[1].coeffs, b[1].coeffs, atol=1e-9)


def test_nonlinear_solve_converges_and_has_zero_mean():
    laws = FluidLaws(CarreauYasuda(r=2.5), LaplaceConvection(s=2))
    ex = ExactSolution()
    u, p, rep = picard_solve(build_triangular(4, 0.3), 2, laws, lambda x: source_term(x, laws, ex), ex.u)
    assert rep.converged and rep.residual_history[-1] <= 1e-10
    assert abs(p.integral()) <= 1e-12
    assert rep.dof_counts["face_velocity"] == face_velocity_dofs(u.space.mesh, 2)
    assert set(rep.timings) >= {"assemble", "solve", "local"}


def test_without_acceleration():
    laws = FluidLaws(CarreauYasuda(r=1.8), LaplaceConvection(s=2))
    ex = ExactSolution()
    cfg = PicardConfig(anderson_depth=0)
    _, _, rep = picard_solve(build_cartesian(4, 4), 1, laws, lambda x: source_term(x, laws, ex), ex.u, cfg)
    assert rep.converged


def test_provided_exact_discrete_solution_is_fixed_point():
    laws = FluidLaws(CarreauYasuda(r=2.5), LaplaceConvection(s=2))
    ex = ExactSolution()
    f = lambda x: source_term(x, laws, ex)
    mesh = build_cartesian(3, 3)
    u, p, _ = picard_solve(mesh, 1, laws, f, ex.u)
    _, _, rep = picard_solve(mesh, 1, laws, f, ex.u, PicardConfig(initial_guess="provided"), initial=(u, p))
    assert rep.converged and rep.iterations <= 1


def test_nonconvergence_reported():
    laws = FluidLaws(CarreauYasuda(r=2.5), LaplaceConvection(s=2))
    ex = ExactSolution()
    cfg = PicardConfig(max_iters=1, tol=1e-15, initial_guess="zero")
    _, _, rep = picard_solve(build_cartesian(3, 3), 1, laws, lambda x: source_term(x, laws, ex), ex.u, cfg)
    assert not rep.converged and rep.iterations == 1


def test_inconsistent_exponents_warn():
    laws = FluidLaws(CarreauYasuda(r=1.5), LaplaceConvection(s=3))
    with pytest.warns(UserWarning, match="consistency bound"):
        picard_solve(build_cartesian(2, 2), 1, laws, None, None, PicardConfig(max_iters=1))


def test_consistent_exponents_do_not_warn():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        picard_solve(build_cartesian(2, 2), 1, STOKES, None, None, PicardConfig(max_iters=1))


@pytest.mark.parametrize("kw", [dict(tol=0), dict(max_iters=0), dict(relaxation=1.5), dict(anderson_depth=-1),
                                dict(initial_guess="newton")])
def test_picard_config_validation(kw):
    with pytest.raises(ValueError):
        PicardConfig(**kw)


def test_provided_needs_initial():
    with pytest.raises(ValueError, match="initial"):
        picard_solve(build_cartesian(2, 2), 1, STOKES, None, None, PicardConfig(initial_guess="provided"))


def test_anderson_solves_linear_fixed_point(rng):
    # x -> M x + b with contraction M; depth n mixing is exact after n+1 steps
    n = 4
    M = 0.5 * rng.standard_normal((n, n)) / np.sqrt(n)
    b = rng.standard_normal(n)
    xs = np.linalg.solve(np.eye(n) - M, b)
    mixer = _Anderson(n)
    x = np.zeros(n)
    for _ in range(n + 2):
        nxt = mixer.mix(x, M @ x + b - x, 1.0)
        x = M @ x + b if nxt is None else nxt
    assert np.allclose(x, xs, atol=1e-10)
    assert _Anderson(0).mix(x, x, 1.0) is None


def test_face_dof_count():
    mesh = build_cartesian(4, 4)
    assert face_velocity_dofs(mesh, 2) == 24 * 2 * 3
    assert build_layout(mesh, 2).n_face == face_velocity_dofs(mesh, 2)


def test_stokes_needs_one_iteration_after_initial_solve():
    u, _, f = stokes_polynomial()
    _, _, rep = picard_solve(build_triangular(3, 0.3), 1, STOKES, f, u)
    assert rep.converged and rep.iterations == 1


def test_shear_thinning_iteration_budget_and_mass_equation():
    laws = FluidLaws(CarreauYasuda(r=1.5), LaplaceConvection(s=2))
    ex = ExactSolution()
    u, _, rep = picard_solve(build_triangular(8, 0.3), 1, laws, lambda x: source_term(x, laws, ex), ex.u)
    assert rep.converged and rep.iterations <= 50
    nE, nk = u.space.mesh.n_elements, u.space.nk
    worst = 0.0
    for e in range(0, nE, 7):
        for a in range(nk):
            c = np.zeros((nE, nk))
            c[e, a] = 1.0
            worst = max(worst, abs(coupling_value(u, BrokenPressure(u.space, c))))
    assert worst <= 10 * 1e-10 * rep.residual_scale
