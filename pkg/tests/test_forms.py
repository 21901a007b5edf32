import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hhons.forms import (FluidLaws, convective_terms, convective_value, coupling_value, initial_viscosity,
                         load_value, local_matrices, stabilization_value, viscous_value)
from hhons.hho import BrokenPressure, HHOSpace, interpolate
from hhons.laws import CarreauYasuda, LaplaceConvection
from hhons.mesh import build_cartesian, build_triangular
from oracles import monomial_field

MESH = build_triangular(3, 0.3)


def make_laws(r=2.0, s=2.0, delta=1.0, nu=1.0):
    return FluidLaws(CarreauYasuda(mu=0.8, delta=delta, r=r), LaplaceConvection(nu=nu, s=s))


def bilinear(systems, w, v):
    total = 0.0
    for ls in systems:
        ne = len(ls.group.ids)
        xw = ls.group.gather(w).reshape(ne, -1)
        xv = ls.group.gather(v).reshape(ne, -1)
        total += np.einsum("ea,eab,eb->", xv, ls.A, xw)
    return total


@pytest.mark.parametrize("r, s", [(2, 2), (1.8, 2), (2.5, 2), (2, 1.5), (2, 3), (1.5, 4.5)])
@pytest.mark.parametrize("k", [1, 2])
def test_picard_matrix_reproduces_forms(r, s, k, rng):
    sp = HHOSpace(MESH, k)
    laws = make_laws(r, s)
    w, v = sp.random_velocity(rng), sp.random_velocity(rng)
    lhs = bilinear(local_matrices(sp, laws, w), w, v)
    rhs = viscous_value(laws, w, v) + convective_value(laws, w, v)
    assert lhs == pytest.approx(rhs, rel=1e-11, abs=1e-12)


@pytest.mark.parametrize("s", [1.5, 2, 2.5, 4.5])
@pytest.mark.parametrize("k", [1, 2, 3])
def test_convection_skew(s, k, rng):
    sp = HHOSpace(MESH, k)
    laws = make_laws(s=s)
    for _ in range(5):
        w = sp.random_velocity(rng, zero_boundary=True)
        t = convective_terms(laws, w, w)
        assert abs(t.sum()) <= 1e-10 * np.abs(t).sum()


def test_convection_nonzero_in_general(rng):
    sp = HHOSpace(MESH, 1)
    w, v = sp.random_velocity(rng), sp.random_velocity(rng)
    assert abs(convective_value(make_laws(s=2.5), w, v)) > 1e-6


def test_convection_vanishes_for_zero_nu(rng):
    sp = HHOSpace(MESH, 1)
    w, v = sp.random_velocity(rng), sp.random_velocity(rng)
    assert convective_value(make_laws(nu=0.0), w, v) == 0.0


def test_coupling_matrix_matches_value(rng):
    sp = HHOSpace(MESH, 2)
    v = sp.random_velocity(rng)
    q = BrokenPressure(sp, rng.standard_normal((MESH.n_elements, sp.nk)))
    total = 0.0
    for ls in local_matrices(sp, make_laws(), None):
        ne = len(ls.group.ids)
        total += np.einsum("ea,eab,eb->", q.coeffs[ls.group.ids], ls.B, ls.group.gather(v).reshape(ne, -1))
    assert total == pytest.approx(coupling_value(v, q), rel=1e-12)


def test_load_vector_matches_value(rng):
    sp = HHOSpace(MESH, 2)
    v = sp.random_velocity(rng)
    f = lambda x: np.stack([np.sin(x[..., 0]), x[..., 1] ** 2], axis=-1)
    total = 0.0
    for ls in local_matrices(sp, make_laws(), None, f=f):
        ne = len(ls.group.ids)
        total += np.einsum("ea,ea->", ls.F, ls.group.gather(v).reshape(ne, -1))
    assert total == pytest.approx(load_value(f, v), rel=1e-12)


def test_linear_viscous_block_symmetric_psd(rng):
    sp = HHOSpace(build_cartesian(2, 2), 2)
    laws = make_laws()
    for ls in local_matrices(sp, laws, None, convection=False, linear_viscosity=laws.stress.mu):
        assert np.allclose(ls.A, ls.A.transpose(0, 2, 1), atol=1e-13)
        assert np.linalg.eigvalsh(ls.A).min() > -1e-12


def test_stabilization_vanishes_on_pk1():
    sp = HHOSpace(MESH, 2)
    u, _ = monomial_field(3, 0)
    Iu = interpolate(u, sp)
    assert abs(stabilization_value(make_laws(r=2.5), Iu, Iu)) <= 1e-20


def test_stabilization_scaling(rng):
    sp = HHOSpace(MESH, 1)
    w = sp.random_velocity(rng)
    base = make_laws()
    doubled = FluidLaws(base.stress, base.convection, stab_scaling=2.0)
    assert stabilization_value(doubled, w, w) == pytest.approx(2 * stabilization_value(base, w, w))


@settings(max_examples=20, deadline=None)
@given(r=st.floats(1.3, 4.0), seed=st.integers(0, 1000))
def test_viscous_form_is_monotone(r, seed):
    rng = np.random.default_rng(seed)
    sp = HHOSpace(build_cartesian(2, 2), 1)
    laws = make_laws(r=r, delta=0.5)
    w, v = sp.random_velocity(rng), sp.random_velocity(rng)
    d = w - v
    val = viscous_value(laws, w, d) - viscous_value(laws, v, d)
    assert val >= -1e-10


def test_initial_viscosity():
    assert initial_viscosity(make_laws(r=3, delta=2.0)) == pytest.approx(0.8 * 2.0)
    assert initial_viscosity(make_laws(r=3, delta=0.0)) == pytest.approx(0.8)


def test_mixed_spaces_rejected(rng):
    a = HHOSpace(MESH, 1).random_velocity(rng)
    b = HHOSpace(MESH, 1).random_velocity(rng)
    with pytest.raises(ValueError):
        viscous_value(make_laws(), a, b)


def test_newtonian_viscous_form_is_bilinear(rng):
    sp = HHOSpace(MESH, 2)
    laws = make_laws()
    w, u, v = (sp.random_velocity(rng) for _ in range(3))
    lhs = viscous_value(laws, w + u, v)
    assert lhs == pytest.approx(viscous_value(laws, w, v) + viscous_value(laws, u, v), rel=1e-11)
    assert viscous_value(laws, w, v) == pytest.approx(viscous_value(laws, v, w), rel=1e-11)


def test_newtonian_blocks_state_independent(rng):
    sp = HHOSpace(MESH, 1)
    laws = make_laws(nu=0.0)
    a = local_matrices(sp, laws, sp.random_velocity(rng))
    b = local_matrices(sp, laws, sp.random_velocity(rng))
    for x, y in zip(a, b):
        assert np.allclose(x.A, y.A, rtol=0, atol=1e-13 * np.abs(x.A).max())
