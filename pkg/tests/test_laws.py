import math
from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hhons.laws import (CarreauYasuda, Exponents, LaplaceConvection, LawSingularityError, condition_report,
                        conjugate, format_interval, singular, sobolev)

tensors = arrays(np.float64, (2, 2), elements=st.floats(-10, 10))
vectors = arrays(np.float64, (2,), elements=st.floats(-10, 10))
exps = st.floats(1.1, 5.0)


def fd_jacobian(fun, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    out = np.zeros(fun(x).shape + x.shape)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        out[(...,) + idx] = (fun(x + e) - fun(x - e)) / (2 * h)
    return out


def test_exponent_calculus_exact():
    assert conjugate(F(3, 2)) == 3
    assert conjugate(F(9, 5)) == F(9, 4)
    assert singular(F(5, 2)) == 2 and singular(F(3, 2)) == F(3, 2)
    assert sobolev(F(3, 2)) == 6
    assert sobolev(2) == math.inf and sobolev(3, d=3) == math.inf
    e = Exponents(F(3, 2), 2)
    assert (e.r_conj, e.s_conj, e.r_sing, e.s_sing, e.r_sob) == (3, 2, F(3, 2), 2, 6)


@pytest.mark.parametrize("m", [1, 0.5, math.inf, -2])
def test_exponent_domain(m):
    with pytest.raises(ValueError):
        conjugate(m)


def test_exponents_rejects_d4():
    with pytest.raises(ValueError):
        Exponents(2, 2, d=4)


@given(exps)
def test_conjugate_is_involution(m):
    assert 1 / m + 1 / conjugate(m) == pytest.approx(1.0)
    assert conjugate(conjugate(m)) == pytest.approx(m)


@pytest.mark.parametrize("kw", [dict(mu=0), dict(delta=-1), dict(a=0), dict(r=1)])
def test_carreau_yasuda_validation(kw):
    with pytest.raises(ValueError):
        CarreauYasuda(**kw)


@settings(max_examples=60, deadline=None)
@given(tau=tensors, r=exps, delta=st.floats(0.1, 2), a=st.floats(0.5, 3))
def test_stress_jacobian_matches_fd(tau, r, delta, a):
    # |tau|^a has a cusp at 0 for small a, which spoils the difference quotient
    assume(np.linalg.norm(tau) > 1e-2)
    law = CarreauYasuda(mu=0.7, delta=delta, a=a, r=r)
    J = law.jacobian(tau)
    Jfd = fd_jacobian(law.stress, tau)
    assert np.allclose(J, Jfd, rtol=1e-5, atol=1e-6 * (1 + np.abs(J).max()))


@settings(max_examples=60, deadline=None)
@given(t1=tensors, t2=tensors, r=exps)
def test_stress_is_monotone(t1, t2, r):
    law = CarreauYasuda(delta=0.5, r=r)
    d = law.stress(t1) - law.stress(t2)
    assert np.sum(d * (t1 - t2)) >= -1e-9 * (1 + np.abs(d).max() * np.abs(t1 - t2).max())


@given(tau=tensors, r=exps)
def test_stress_jacobian_symmetric(tau, r):
    J = CarreauYasuda(delta=1, r=r).jacobian(tau)
    assert np.allclose(J, J.transpose(2, 3, 0, 1))


def test_stress_jacobian_at_origin():
    law = CarreauYasuda(mu=0.7, delta=0.5, a=0.5, r=3.0)
    J = law.jacobian(np.zeros((2, 2)))
    assert np.allclose(J.reshape(4, 4), law.viscosity_of_norm(0.0) * np.eye(4))


def test_newtonian_and_degenerate():
    tau = np.array([[1.0, 2.0], [0.5, -1.0]])
    assert np.allclose(CarreauYasuda(mu=3).stress(tau), 3 * tau)
    z = np.zeros((2, 2))
    for r in (1.5, 3.0):
        law = CarreauYasuda(delta=0, r=r)
        assert np.all(law.stress(z) == 0)
    assert CarreauYasuda(delta=0, r=3).viscosity(z) == 0
    assert np.isinf(CarreauYasuda(delta=0, r=1.5).viscosity(z))


def test_power_law_growth():
    law = CarreauYasuda(mu=1, delta=0, r=3)
    tau = np.eye(2)
    assert np.allclose(law.stress(2 * tau), 4 * law.stress(tau))


def test_stress_broadcasts():
    taus = np.random.default_rng(1).standard_normal((4, 3, 2, 2))
    law = CarreauYasuda(r=2.5)
    assert law.stress(taus).shape == (4, 3, 2, 2)
    assert law.jacobian(taus).shape == (4, 3, 2, 2, 2, 2)
    assert np.allclose(law.stress(taus)[1, 2], law.stress(taus[1, 2]))


@settings(max_examples=60, deadline=None)
@given(w=vectors, s=exps)
def test_convection_jacobian_matches_fd(w, s):
    chi = LaplaceConvection(nu=1.3, s=s)
    if np.linalg.norm(w) < 1e-2:
        return
    assert np.allclose(chi.jacobian(w), fd_jacobian(chi, w), rtol=1e-5, atol=1e-6)


@given(w=vectors, s=exps, t=st.floats(0.01, 10))
def test_convection_homogeneity(w, s, t):
    chi = LaplaceConvection(nu=1, s=s)
    assert np.allclose(chi(t * w), t ** (s - 1) * chi(w), rtol=1e-9, atol=1e-12)


def test_convection_singular_jacobian():
    chi = LaplaceConvection(s=1.5)
    with pytest.raises(LawSingularityError):
        chi.jacobian(np.zeros(2))
    assert np.all(chi(np.zeros(2)) == 0)
    assert np.all(LaplaceConvection(s=3).jacobian(np.zeros(2)) == 0)
    assert np.all(LaplaceConvection(nu=0, s=1.5).jacobian(np.zeros(2)) == 0)
    with pytest.raises(ValueError):
        LaplaceConvection(nu=-1)


@pytest.mark.parametrize("r, cons, uniq", [(F(3, 2), 2, 2), (2, math.inf, math.inf), (3, math.inf, math.inf)])
def test_condition_bounds(r, cons, uniq):
    rep = condition_report(r, 2)
    assert rep.consistency_bound == cons and rep.uniqueness_bound == uniq


def test_condition_flags():
    rep = condition_report(F(3, 2), 2)
    assert rep.consistency_ok and not rep.strict_consistency_ok and rep.error_estimate_ok
    rep = condition_report(F(3, 2), 3)
    assert not rep.consistency_ok and rep.rate_source == "none"
    assert format_interval(rep.predicted_rate_velocity) == "n/a"
    assert not condition_report(2, F(3, 2)).uniqueness_interval_ok
    assert condition_report(F(5, 2), 2).rate_source == "stokes"


def test_condition_accepts_float_rationals():
    rep = condition_report(1.8, 2.0)
    assert rep.r == F(9, 5)
    assert rep.predicted_rate_velocity == (F(8, 5), 2)
    assert format_interval(rep.predicted_rate_pressure) == "[32/25,8/5]"


@pytest.mark.parametrize("k", [0, 1.5])
def test_condition_rejects_k(k):
    with pytest.raises(ValueError):
        condition_report(2, 2, k=k)
