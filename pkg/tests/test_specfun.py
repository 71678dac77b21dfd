import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from nomalf.errors import DomainError
from nomalf.specfun import (EULER, LOG2E, ei_neg_scaled, exp_int_ei, exp_int_en, exp_int_en_scaled,
                            expn_scaled_table, gauss_2f1_neg, log2_gamma_sum, psi_integral, theta,
                            theta_closed, theta_quadrature)

mp.mp.dps = 40


def rel(a, b):
    return abs(a - b) / abs(b)


# --- exponential integrals -------------------------------------------------

def test_ei_reference_values():
    # oracles: quadrature for x < 0, the power series for x > 0
    oracle_neg = -quad(lambda t: math.exp(-t) / t, 1, np.inf, epsabs=0, epsrel=1e-13)[0]
    oracle_pos = EULER + sum(1.0 / (k * math.factorial(k)) for k in range(1, 40))
    assert rel(exp_int_ei(-1.0), oracle_neg) < 1e-12
    assert rel(exp_int_ei(1.0), oracle_pos) < 1e-12
    assert exp_int_ei(-1.0) == pytest.approx(-0.21938393, abs=1e-8)
    assert exp_int_ei(1.0) == pytest.approx(1.89511782, abs=1e-8)


def test_ei_tail_bounds():
    y = 10.0
    v = math.exp(y) * abs(exp_int_ei(-y))
    assert 1 / (1 + y) < v < 1 / y


@pytest.mark.parametrize("x", list(np.geomspace(1e-8, 700, 60)))
def test_ei_against_mpmath(x):
    assert rel(exp_int_ei(x), float(mp.ei(x))) <= 1e-12
    assert rel(exp_int_ei(-x), float(mp.ei(-x))) <= 1e-12


def test_ei_domain():
    with pytest.raises(DomainError):
        exp_int_ei(0.0)
    with pytest.raises(OverflowError):
        exp_int_ei(800.0)


@pytest.mark.parametrize("q", [1, 2, 3, 5, 8, 12])
@pytest.mark.parametrize("x", [1e-3, 0.1, 0.5, 1.0, 2.5, 7.0, 20.0, 50.0])
def test_en_against_mpmath(q, x):
    assert rel(exp_int_en(q, x), float(mp.expint(q, x))) <= 1e-10
    scaled = float(mp.exp(x) * mp.expint(q, x))
    assert rel(exp_int_en_scaled(q, x), scaled) <= 1e-10


def test_en_small_argument_and_e1():
    assert exp_int_en(2, 1e-14) == pytest.approx(1.0, rel=1e-10)
    assert exp_int_en(1, 1.0) == pytest.approx(-exp_int_ei(-1.0), rel=1e-13)
    with pytest.raises(DomainError):
        exp_int_en(1, 0.0)


@given(q=st.integers(2, 12), x=st.floats(1e-3, 50))
@settings(max_examples=200, deadline=None)
def test_en_recurrence(q, x):
    lhs = exp_int_en(q, x)
    rhs = (math.exp(-x) - x * exp_int_en(q - 1, x)) / (q - 1)
    assert abs(lhs - rhs) <= 1e-10 * abs(lhs) + 1e-300


@given(x=st.floats(1e-6, 1e6))
@settings(max_examples=300, deadline=None)
def test_e1_scaled_bounds(x):
    v = exp_int_en_scaled(1, x)
    assert 1 / (x + 1) < v * (1 + 1e-14)
    assert v <= 1 / x * (1 + 1e-14)


def test_expn_table_matches_scalar():
    xs = np.array([0.01, 0.3, 4.0, 90.0])
    tab = expn_scaled_table(6, xs)
    for i, x in enumerate(xs):
        for q in range(1, 7):
            assert rel(tab[i, q - 1], exp_int_en_scaled(q, x)) < 1e-12


def test_scaled_functions_do_not_overflow():
    # exp(large) * E(large) products as they arise for small delta
    assert math.isfinite(ei_neg_scaled(5e5))
    assert ei_neg_scaled(5e5) == pytest.approx(-1 / 5e5, rel=1e-5)
    assert exp_int_en_scaled(5, 1e8) == pytest.approx(1e-8, rel=1e-6)


# --- Gauss hypergeometric --------------------------------------------------

def test_2f1_examples():
    assert gauss_2f1_neg(2.3, 1.7, 0.0) == 1.0
    assert gauss_2f1_neg(1, 1, -1) == pytest.approx(math.log(2), rel=1e-12)
    # integral representation: p * int_0^1 t^{p-1} (1 - z t)^{-s} dt
    s, p, z = 2.0, 3.0, -0.7
    oracle = p * quad(lambda t: t ** (p - 1) * (1 - z * t) ** (-s), 0, 1, epsabs=0, epsrel=1e-13)[0]
    assert rel(gauss_2f1_neg(s, p, z), oracle) < 1e-10


@given(s=st.floats(-4, 6), p=st.floats(0.1, 12), z=st.floats(-200, 0))
@settings(max_examples=200, deadline=None)
def test_2f1_against_mpmath(s, p, z):
    ref = float(mp.hyp2f1(s, p, p + 1, z))
    got = gauss_2f1_neg(s, p, z)
    assert abs(got - ref) <= 1e-10 * abs(ref) + 1e-14


def test_2f1_domain():
    with pytest.raises(DomainError):
        gauss_2f1_neg(1, 1, 0.5)


# --- Psi family ------------------------------------------------------------

def psi_oracle(n, u, v):
    f = lambda x: mp.mpf(x) ** n * mp.exp(x) * mp.ei(-x)
    return float(mp.quad(f, [u, v] if v != math.inf else [u, 2 * u + 10, mp.inf]))


def test_psi_examples():
    ref = math.exp(2) * exp_int_ei(-2) - math.e * exp_int_ei(-1) - math.log(2)
    assert psi_integral(0, 1, 2).value == pytest.approx(ref, rel=1e-12)
    # frozen from adaptive quadrature of the defining integral
    assert psi_integral(0, 1, 2).value == pytest.approx(-0.4581284351249734, abs=1e-12)
    assert psi_integral(1, 1, 1).value == 0.0
    assert psi_integral(-3, 2).value == pytest.approx(psi_oracle(-3, 2, math.inf), rel=1e-6)


@pytest.mark.parametrize("n", list(range(-8, 6)))
@pytest.mark.parametrize("u,v", [(0.01, 0.5), (0.1, 3.0), (1.0, 2.0), (2.0, 9.0), (10.0, 25.0),
                                 (0.5, math.inf), (10.0, math.inf)])
def test_psi_against_quadrature(n, u, v):
    if v == math.inf and n > -2:
        with pytest.raises(DomainError):
            psi_integral(n, u, v)
        return
    got = psi_integral(n, u, v)
    ref = psi_oracle(n, u, v)
    assert abs(got.value - ref) <= max(1e-8, 1e-6 * abs(ref))
    assert got.est_abs_error >= 0 and math.isfinite(got.est_abs_error)


def test_psi_domain():
    with pytest.raises(DomainError):
        psi_integral(1, 2.0, 1.0)
    with pytest.raises(DomainError):
        psi_integral(1, 0.0, 1.0)


# --- Theta -----------------------------------------------------------------

def theta_mc(a, b, M, n, seed):
    rng = np.random.default_rng(seed)
    X = rng.exponential(size=n)
    Y = rng.gamma(M - 1, size=n)
    Z = rng.beta(1, M - 1, size=n)
    s = np.log2(1 + a * Z * X + (a * Z + b) * Y)
    return s.mean(), s.std(ddof=1) / math.sqrt(n)


def test_theta_m2_monte_carlo():
    m, se = theta_mc(1.0, 1.0, 2, 10**6, 7)
    assert abs(theta(1.0, 1.0, 2).value - m) < 4 * se


@pytest.mark.parametrize("M", [2, 3, 4, 6])
def test_theta_small_a_limit(M):
    b = 0.7
    lim = LOG2E * math.fsum(exp_int_en_scaled(q, 1 / b) for q in range(1, M))
    assert theta(1e-9, b, M).value == pytest.approx(lim, rel=1e-6)
    assert log2_gamma_sum(b, M - 1) == pytest.approx(lim, rel=1e-12)


@pytest.mark.filterwarnings("ignore::nomalf.errors.LossOfPrecisionWarning")
@given(a=st.floats(0.01, 50), b=st.floats(0.01, 50), M=st.sampled_from([2, 3, 4, 6, 8]))
@settings(max_examples=60, deadline=None)
def test_theta_monotone_in_a(a, b, M):
    assert theta(2 * a, b, M).value > theta(a, b, M).value


@pytest.mark.filterwarnings("ignore::nomalf.errors.LossOfPrecisionWarning")
@given(a=st.floats(0.05, 20), b=st.floats(0.05, 20), M=st.sampled_from([2, 3, 4, 6]))
@settings(max_examples=40, deadline=None)
def test_theta_closed_vs_quadrature(a, b, M):
    q = theta_quadrature(a, b, M, nodes=40).value
    assert theta(a, b, M).value == pytest.approx(q, rel=1e-6)


def test_theta_flags_loss_of_precision():
    res = theta_closed(10.0, 0.1, 6)
    assert res.est_abs_error >= 0
    with pytest.warns(Warning):
        auto = theta(10.0, 0.1, 6)
    assert "quadrature_fallback" in auto.flags


def test_functions_are_pure():
    assert theta(1.3, 0.4, 4).value == theta(1.3, 0.4, 4).value
    assert psi_integral(-2, 0.3).value == psi_integral(-2, 0.3).value
