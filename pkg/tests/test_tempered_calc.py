"""Point evaluation of tempered integrals and derivatives against closed forms and mpmath."""

from __future__ import annotations

import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tempered_dg.errors import (
    InvalidOrderError,
    NonIntegrableKernelError,
    OutOfDomainError,
    SingularPointError,
)
from tempered_dg.tempered_calc import (
    PiecewisePoly1D,
    TemperedParams,
    function_derivative,
    make_singular_rule,
    riesz_constants,
    tempered_caputo_derivative,
    tempered_integral,
    tempered_rl_derivative,
)


def poly(bp, f, deg):
    return PiecewisePoly1D.from_function(bp, f, deg)


def mp_tempered_integral(f, a, x, mu, lam):
    # r = x - s = v^(1/mu) removes the kernel singularity
    mp.mp.dps = 30
    mu = mp.mpf(mu)
    g = lambda v: mp.e ** (-lam * v ** (1 / mu)) * f(x - v ** (1 / mu))
    return float(mp.quad(g, [0, (mp.mpf(x) - a) ** mu]) / (mu * mp.gamma(mu)))


# ---------------------------------------------------------------- parameters


def test_riesz_constant_half():
    ka, kb, _ = riesz_constants(TemperedParams(0.5, 0.5))
    assert ka == pytest.approx(1 / math.sqrt(2), rel=1e-14)
    assert kb == pytest.approx(1 / math.sqrt(2), rel=1e-14)


def test_shift_constant_example_coefficients():
    p = TemperedParams(0.5, 0.5, lam=2.0, kappa1=0.1, kappa2=0.2)
    assert riesz_constants(p)[2] == pytest.approx(0.6, rel=1e-13)
    assert p.kappa == pytest.approx(0.6, rel=1e-13)


def test_riesz_constant_sign_flip_above_one():
    ka, _, _ = riesz_constants(TemperedParams(1.5, 0.5))
    assert ka == pytest.approx(-1 / math.sqrt(2), rel=1e-13)


@pytest.mark.parametrize("kw", [dict(alpha=1.0, beta=0.5), dict(alpha=0.5, beta=1.0), dict(alpha=0.5, beta=0.5, lam=-1)])
def test_invalid_parameters(kw):
    with pytest.raises(InvalidOrderError):
        TemperedParams(**kw)


def test_zero_tempering_gives_zero_shift():
    assert TemperedParams(0.3, 0.9, lam=0.0).kappa == 0.0


# ---------------------------------------------------------------- singular rules


def test_singular_rule_plain_gauss():
    r = make_singular_rule(0.0, 3)
    assert r.integrate(lambda s: s**3) == pytest.approx(0.25, rel=1e-14)


def test_singular_rule_inverse_sqrt():
    assert make_singular_rule(-0.5, 0).integrate(lambda s: 1 + 0 * s) == pytest.approx(2.0, rel=1e-12)


def test_singular_rule_moment():
    r = make_singular_rule(-0.25, 2)
    assert r.integrate(lambda s: s**2) == pytest.approx(1 / 2.75, rel=1e-12)


def test_singular_rule_rejects_nonintegrable():
    with pytest.raises(NonIntegrableKernelError):
        make_singular_rule(-1.0, 2)


@given(st.floats(-0.95, 3.0), st.integers(0, 12))
@settings(max_examples=40, deadline=None)
def test_singular_rule_moments(gam, deg):
    r = make_singular_rule(gam, deg)
    assert np.all(r.weights > 0)
    for k in range(deg + 1):
        assert r.integrate(lambda s: s**k) == pytest.approx(1 / (gam + k + 1), rel=1e-12)


# ---------------------------------------------------------------- integrals


def test_integral_of_zero():
    u = PiecewisePoly1D.constant([0, 0.5, 1], 0.0)
    assert tempered_integral(u, 0.7, 1.3, 0.6) == 0.0


def test_integral_of_constant():
    u = PiecewisePoly1D.constant([0, 1], 1.0)
    assert tempered_integral(u, 0.5, 0.0, 1.0) == pytest.approx(2 / math.sqrt(math.pi), rel=1e-13)


def test_integral_tempered_power():
    # u = e^{-lam x} x: the tempered integral is e^{-lam x} x^{1.5} / Gamma(2.5)
    lam, x = 2.0, 0.5
    u = poly(np.linspace(0, 1, 9), lambda s: np.exp(-lam * s) * s, 10)
    want = math.exp(-lam * x) * x**1.5 / math.gamma(2.5)
    assert tempered_integral(u, 0.5, lam, x) == pytest.approx(want, rel=1e-12)


@pytest.mark.parametrize("mu,lam,x", [(0.3, 0.0, 0.77), (0.5, 1.5, 1.2), (1.7, 0.4, 1.9), (0.9, 3.0, 0.35)])
def test_integral_against_mpmath(mu, lam, x):
    c = [0.3, -1.2, 0.7, 0.25]
    f = lambda s: sum(ck * s**k for k, ck in enumerate(c))
    u = poly([0, 0.4, 1.1, 2.0], lambda s: f(s), 3)
    want = mp_tempered_integral(f, 0, x, mu, lam)
    assert tempered_integral(u, mu, lam, x) == pytest.approx(want, rel=1e-12, abs=1e-14)


def test_right_integral_is_mirror():
    u = poly([0, 0.3, 1.0, 2.0], lambda s: np.sin(s) + s**2, 6)
    x, mu, lam = 0.8, 0.6, 1.1
    # reflect: the right integral at x is the left integral of u(2 - s) at 2 - x
    want = mp_tempered_integral(lambda s: mp.sin(2 - s) + (2 - s) ** 2, 0.0, 2.0 - x, mu, lam)
    # the piecewise polynomial is only a degree-6 interpolant of f
    assert tempered_integral(u, mu, lam, x, "right") == pytest.approx(want, rel=1e-6)


def test_integral_errors():
    u = PiecewisePoly1D.constant([0, 1])
    with pytest.raises(InvalidOrderError):
        tempered_integral(u, 0.0, 0.0, 0.5)
    with pytest.raises(OutOfDomainError):
        tempered_integral(u, 0.5, 0.0, 1.5)
    with pytest.raises(ValueError):
        tempered_integral(u, 0.5, 0.0, 0.5, side="up")


# ---------------------------------------------------------------- derivatives


def test_derivative_of_zero():
    u = PiecewisePoly1D.constant([0, 1, 2], 0.0)
    assert tempered_rl_derivative(u, 0.4, 1.0, 0.5) == 0.0
    assert tempered_caputo_derivative(u, 0.4, 1.0, 0.5) == 0.0


def test_rl_derivative_tempered_square():
    # e^{-2x} x^2 on [0, 2]: e^{-2} Gamma(3)/Gamma(2.6) at x = 1
    u = poly(np.linspace(0, 2, 17), lambda s: np.exp(-2 * s) * s**2, 12)
    want = math.exp(-2.0) * math.gamma(3) / math.gamma(2.6)
    assert tempered_rl_derivative(u, 0.4, 2.0, 1.0 + 1e-9) == pytest.approx(want, rel=1e-9)


def test_rl_derivative_untempered_linear():
    u = poly([0, 1], lambda s: s, 1)
    want = 2 * math.sqrt(0.25) / math.sqrt(math.pi)
    assert tempered_rl_derivative(u, 0.5, 0.0, 0.25) == pytest.approx(want, rel=1e-13)
    assert want == pytest.approx(0.5642, abs=1e-4)


def test_caputo_of_constant_vs_rl():
    u = PiecewisePoly1D.constant([0, 1], 1.0)
    x = 1.0 - 1e-9
    assert tempered_caputo_derivative(u, 0.5, 0.0, x) == pytest.approx(0.0, abs=1e-14)
    # the RL form keeps the boundary term u(a) x^{-mu} / Gamma(1 - mu)
    assert tempered_rl_derivative(u, 0.5, 0.0, x) == pytest.approx(1 / math.sqrt(math.pi * x), rel=1e-12)


def test_rl_equals_caputo_under_condition_a():
    u = poly([0, 0.5, 1.2, 2.0], lambda s: s * (2 - s) ** 2, 3)
    for x in (0.2, 0.9, 1.7):
        a = tempered_rl_derivative(u, 0.6, 0.8, x)
        b = tempered_caputo_derivative(u, 0.6, 0.8, x)
        assert a == pytest.approx(b, rel=1e-12, abs=1e-14)


def test_derivative_jump_terms():
    # piecewise constant with a unit jump at 1: RL picks up (x-1)^{-mu} e^{-lam(x-1)} / Gamma(1-mu)
    u = PiecewisePoly1D([0, 1, 2], [[0.0], [1.0]])
    mu, lam, x = 0.3, 0.7, 1.4
    want = (x - 1) ** (-mu) * math.exp(-lam * (x - 1)) / math.gamma(1 - mu)
    # plus the tempering part lam * I^{1-mu} of the step
    want += lam * mp_tempered_integral(lambda s: 1, 1.0, x, 1 - mu, lam)
    assert tempered_rl_derivative(u, mu, lam, x) == pytest.approx(want, rel=1e-12)


def test_derivative_errors():
    u = PiecewisePoly1D.constant([0, 1, 2])
    with pytest.raises(InvalidOrderError):
        tempered_rl_derivative(u, 1.2, 0.0, 0.5)
    with pytest.raises(SingularPointError):
        tempered_rl_derivative(u, 0.5, 0.0, 1.0)
    with pytest.raises(OutOfDomainError):
        tempered_caputo_derivative(u, 0.5, 0.0, -0.1)


@given(
    mu=st.floats(0.05, 0.95),
    lam=st.floats(0.0, 3.0),
    x=st.floats(0.05, 1.95),
    c=st.lists(st.floats(-2, 2), min_size=3, max_size=3),
)
@settings(max_examples=30, deadline=None)
def test_right_derivative_is_mirrored_left(mu, lam, x, c):
    bp = [0.0, 0.7, 2.0]
    if min(abs(x - b) for b in bp) < 1e-3:
        return
    u = poly(bp, lambda s: c[0] + c[1] * s + c[2] * s**2, 2)
    um = u.mirrored()
    r = tempered_rl_derivative(u, mu, lam, x, "right")
    l = tempered_rl_derivative(um, mu, lam, 2.0 - x, "left")
    assert r == pytest.approx(l, rel=1e-12, abs=1e-12)


@given(mu=st.floats(0.05, 0.95), lam=st.floats(0.0, 3.0), a=st.floats(-3, 3), b=st.floats(-3, 3))
@settings(max_examples=30, deadline=None)
def test_linearity(mu, lam, a, b):
    bp = [0.0, 0.5, 1.5]
    u = poly(bp, lambda s: s**2 - s, 2)
    v = poly(bp, lambda s: np.cos(s), 4)
    w = PiecewisePoly1D(u.breakpoints, np.pad(a * u.coeffs, ((0, 0), (0, 2))) + b * v.coeffs)
    x = 1.1
    lhs = tempered_rl_derivative(w, mu, lam, x)
    rhs = a * tempered_rl_derivative(u, mu, lam, x) + b * tempered_rl_derivative(v, mu, lam, x)
    assert lhs == pytest.approx(rhs, rel=1e-11, abs=1e-11)


# ---------------------------------------------------------------- smooth callables


def test_function_derivative_matches_piecewise_path():
    g = lambda s: s**2 * (2 - s) ** 2
    dg = lambda s: 2 * s * (2 - s) ** 2 - 2 * s**2 * (2 - s)
    u = poly([0, 2], g, 4)
    xs = np.array([0.3, 1.0, 1.6])
    got = function_derivative(g, dg, 0.0, xs, 0.7, 1.5)
    want = [tempered_rl_derivative(u, 0.7, 1.5, x) for x in xs]
    np.testing.assert_allclose(got, want, rtol=1e-11)


# ---------------------------------------------------------------- operator identities


@pytest.mark.parametrize("mu,lam", [(0.3, 0.0), (0.5, 1.5), (0.8, 3.0)])
def test_integral_undoes_derivative(mu, lam):
    from scipy import integrate

    f = lambda s: s * (1.3 - s) * (0.4 + s**2)
    u = poly([0.0, 0.6, 1.2], f, 4)
    for x in (0.35, 0.9, 1.15):
        # u(0) = 0, so the derivative is (s^(1 - mu)) times a smooth factor
        def g(s):
            s = min(max(s, 1e-13), x - 1e-13)
            return tempered_rl_derivative(u, mu, lam, s) / s ** (1 - mu) * math.exp(-lam * (x - s))

        val, _ = integrate.quad(g, 0.0, x, weight="alg", wvar=(1 - mu, mu - 1), epsabs=0.0, epsrel=1e-13, limit=200)
        assert val / math.gamma(mu) == pytest.approx(f(x), rel=1e-8)


@pytest.mark.parametrize("mu,lam", [(0.4, 2.0), (0.7, 1.0), (1.5, 3.0)])
def test_integral_matches_fourier_symbol(mu, lam):
    # compactly supported C^3 bump on [-1, 1], periodic extension of length 32;
    # the evaluation points are grid points
    bump = lambda s: (1 - s**2) ** 4
    u = poly([-1.0, 0.0, 1.0], bump, 8)
    L, n = 32.0, 2**16
    xs = -L / 2 + L * np.arange(n) / n
    vals = np.where(np.abs(xs) < 1, bump(xs), 0.0)
    om = 2 * np.pi * np.fft.fftfreq(n, L / n)
    via_fft = np.fft.ifft((lam + 1j * om) ** (-mu) * np.fft.fft(vals)).real
    for x in (-0.5, 0.0, 0.25, 0.875):
        i = int((x + L / 2) * n / L)
        assert xs[i] == x
        assert tempered_integral(u, mu, lam, x) == pytest.approx(via_fft[i], abs=1e-4)
