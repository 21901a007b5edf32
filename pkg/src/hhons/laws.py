"""Exponent calculus, constitutive laws and the exponent condition report.

Tensor arguments have shape ``(..., 2, 2)`` and vectors ``(..., 2)``; all
functions broadcast over leading axes. ``|tau|`` is the Frobenius norm.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np


class LawSingularityError(ArithmeticError):
    """Raised where a Jacobian does not exist."""


# -- exponents --------------------------------------------------------------


def _check(m):
    if not (m > 1 and m < math.inf):
        raise ValueError(f"exponent {m} must lie in (1, inf)")


def conjugate(m):
    """``m' = m / (m - 1)``; exact for Fractions."""
    _check(m)
    return m / (m - 1)


def singular(m):
    """``min(m, 2)``."""
    _check(m)
    return min(m, 2)


def sobolev(m, d=2):
    """``d m / (d - m)`` if ``m < d``, else ``inf``."""
    _check(m)
    return d * m / (d - m) if m < d else math.inf


@dataclass(frozen=True)
class Exponents:
    r: float
    s: float
    d: int = 2

    def __post_init__(self):
        _check(self.r)
        _check(self.s)
        if self.d not in (2, 3):
            raise ValueError("d must be 2 or 3")

    @property
    def r_conj(self):
        return conjugate(self.r)

    @property
    def s_conj(self):
        return conjugate(self.s)

    @property
    def r_sing(self):
        return singular(self.r)

    @property
    def s_sing(self):
        return singular(self.s)

    @property
    def r_sob(self):
        return sobolev(self.r, self.d)


# -- Carreau-Yasuda ---------------------------------------------------------


def _fro(t):
    return np.sqrt(np.einsum("...ij,...ij->...", t, t))


@dataclass(frozen=True)
class CarreauYasuda:
    """``sigma(tau) = mu (delta^a + |tau|^a)^((r-2)/a) tau``."""

    mu: float = 1.0
    delta: float = 1.0
    a: float = 2.0
    r: float = 2.0

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if not self.delta >= 0:
            raise ValueError("delta must be non-negative")
        if not self.a > 0:
            raise ValueError("a must be positive")
        _check(self.r)

    @property
    def newtonian(self) -> bool:
        return self.r == 2

    def viscosity(self, tau):
        """Effective viscosity ``nu(tau)`` with ``sigma = nu tau``; for
        ``delta = 0`` it is 0 at ``tau = 0`` (r > 2) or infinite (r < 2)."""
        t = _fro(np.asarray(tau, dtype=float))
        return self.viscosity_of_norm(t)

    def viscosity_of_norm(self, t):
        t = np.asarray(t, dtype=float)
        if self.r == 2:
            return np.full(t.shape, self.mu)
        base = self.delta ** self.a + t ** self.a
        with np.errstate(divide="ignore"):
            return self.mu * base ** ((self.r - 2) / self.a)

    def stress(self, tau):
        tau = np.asarray(tau, dtype=float)
        nu = self.viscosity(tau)
        # sigma(0) = 0 also when nu(0) is infinite
        nu = np.where(np.isfinite(nu), nu, 0.0)
        return nu[..., None, None] * tau

    def jacobian(self, tau):
        """``d sigma / d tau`` as ``(..., 2, 2, 2, 2)`` with [i, j, k, l] =
        d sigma_ij / d tau_kl; the ``tau tensor tau`` part vanishes at 0."""
        tau = np.asarray(tau, dtype=float)
        t = _fro(tau)
        nu = self.viscosity_of_norm(t)
        eye = np.einsum("ik,jl->ijkl", np.eye(2), np.eye(2))
        out = nu[..., None, None, None, None] * eye
        if self.r != 2:
            base = self.delta ** self.a + t ** self.a
            with np.errstate(divide="ignore", invalid="ignore"):
                # nu'(t) / t
                w = self.mu * (self.r - 2) * t ** (self.a - 2) * base ** ((self.r - 2 - self.a) / self.a)
            w = np.where(t > 0, w, 0.0)
            out = out + w[..., None, None, None, None] * np.einsum("...ij,...kl->...ijkl", tau, tau)
        return out


# -- Laplace convection -----------------------------------------------------


@dataclass(frozen=True)
class LaplaceConvection:
    """``chi(w) = nu |w|^(s-2) w``."""

    nu: float = 1.0
    s: float = 2.0

    def __post_init__(self):
        if not self.nu >= 0:
            raise ValueError("nu must be non-negative")
        _check(self.s)

    def weight(self, w):
        """``nu |w|^(s-2)``, 0 at ``w = 0``."""
        n = np.linalg.norm(np.asarray(w, dtype=float), axis=-1)
        if self.s == 2:
            return np.full(n.shape, float(self.nu))
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self.nu * n ** (self.s - 2)
        return np.where(n > 0, out, 0.0)

    def __call__(self, w):
        w = np.asarray(w, dtype=float)
        return self.weight(w)[..., None] * w

    def jacobian(self, w):
        w = np.asarray(w, dtype=float)
        n = np.linalg.norm(w, axis=-1)
        if self.s < 2 and self.nu != 0 and np.any(n == 0):
            raise LawSingularityError("convection Jacobian is singular at w = 0 for s < 2")
        out = self.weight(w)[..., None, None] * np.eye(2)
        if self.s != 2:
            with np.errstate(divide="ignore", invalid="ignore"):
                c = self.nu * (self.s - 2) * n ** (self.s - 4)
            c = np.where(n > 0, c, 0.0)
            out = out + c[..., None, None] * np.einsum("...i,...j->...ij", w, w)
        return out


# -- condition report -------------------------------------------------------


@dataclass(frozen=True)
class ConditionReport:
    r: object
    s: object
    d: int
    k: int
    r_conj: object
    r_sob: object
    consistency_bound: object      # r* / r'
    uniqueness_bound: object       # r~* / r~'
    consistency_ok: bool
    strict_consistency_ok: bool
    uniqueness_interval_ok: bool
    error_estimate_ok: bool
    predicted_rate_velocity: tuple
    predicted_rate_pressure: tuple
    rate_source: str               # "estimate", "stokes" or "none"


def _exact(x):
    """Promote to Fraction when ``x`` is a short rational, else keep float."""
    if isinstance(x, (int, Fraction)):
        return Fraction(x)
    f = Fraction(x).limit_denominator(1000)
    return f if float(f) == x else float(x)


def _ratio(a, b):
    if a == math.inf:
        return math.inf
    return a / b


def condition_report(r, s, d=2, k=1) -> ConditionReport:
    """Admissibility flags and predicted convergence rates.

    Rational inputs (ints, Fractions, or floats with a short exact fraction)
    are handled in exact arithmetic, so the predicted rates come out as
    Fractions.
    """
    if d != 2:
        raise ValueError("only d = 2 is supported")
    if int(k) != k or k < 1:
        raise ValueError("k must be ≥ 1")
    r, s = _exact(r), _exact(s)
    _check(r)
    _check(s)
    rc = conjugate(r)
    rs = sobolev(r, d)
    rt = singular(r)
    cons = _ratio(rs, rc)
    uniq = _ratio(sobolev(rt, d), conjugate(rt))
    consistency_ok = s <= cons
    strict = s < cons
    uniq_ok = 2 <= s <= uniq
    err_ok = r <= 2 <= s <= cons
    kk = k + 1
    if err_ok:
        vel = (kk * (r - 1), kk)
        pre = (kk * (r - 1) ** 2, kk * (r - 1))
        source = "estimate"
    elif r > 2 and s >= 2:
        rate = Fraction(kk) / (r - 1) if isinstance(r, Fraction) else kk / (r - 1)
        vel = pre = (rate, rate)
        source = "stokes"
    else:
        vel = pre = (None, None)
        source = "none"
    return ConditionReport(r, s, d, int(k), rc, rs, cons, uniq, bool(consistency_ok), bool(strict),
                           bool(uniq_ok), bool(err_ok), vel, pre, source)


def format_interval(iv) -> str:
    lo, hi = iv
    if lo is None:
        return "n/a"
    if lo == hi:
        return str(lo)
    return f"[{lo},{hi}]"
