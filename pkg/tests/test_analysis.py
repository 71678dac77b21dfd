import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from nomalf.alloc import _PowerModel, bits_closed_form, lb2_objective, power_fixed_point, power_from_phi
from nomalf.analysis import (LB2_CONSTANT, LinkCoefficients, link_coefficients, quant_gamma, rate_ideal,
                             rate_lb1, rate_lb2_tilde, rate_loss_ub)
from nomalf.errors import ConfigError

from conftest import random_scenario


def lc(S1, S2=0.0, S3=0.0, delta=1.0):
    return LinkCoefficients(S1, S2, S3, delta)


def test_constants():
    assert LB2_CONSTANT == pytest.approx(0.8327, abs=5e-5)
    assert quant_gamma(2) == pytest.approx(2.0)      # Gamma(3)


def test_ideal_unit_snr():
    oracle = integrate.quad(lambda x: math.log2(1 + x) * math.exp(-x), 0, np.inf, epsabs=0, epsrel=1e-12)[0]
    assert rate_ideal(lc(1.0), 6, 1).value == pytest.approx(oracle, rel=1e-12)
    assert oracle == pytest.approx(0.8603473822708859, rel=1e-12)


def test_ideal_limits():
    assert rate_ideal(lc(0.0), 4, 1).value == 0.0
    assert rate_ideal(lc(2e9, 1e9), 4, 2).value == pytest.approx(1.0, abs=1e-6)


def test_lb1_zero_power():
    for k in (1, 2, 3):
        v = rate_lb1(lc(1e-12, 1e-12 * (k > 1) * 0.5, 5.0, 0.1), 6, k).value
        assert abs(v) < 1e-10


def test_lb1_without_interference_is_ideal():
    # Z (X + Y) is Exp(1), so Theta(a, 0) = E log2(1 + a Exp(1))
    for M in (2, 4, 6):
        assert rate_lb1(lc(3.0), M, 1).value == pytest.approx(rate_ideal(lc(3.0), M, 1).value, rel=1e-9)
        c = lc(5.0, 2.0)
        assert rate_lb1(c, M, 2).value == pytest.approx(rate_ideal(c, M, 2).value, rel=1e-9)


def theta_3d(a, b):
    # M = 2: X, Y ~ Exp(1), Z ~ U(0, 1)
    f = lambda x, y, z: math.log2(1 + a * z * x + (a * z + b) * y) * math.exp(-x - y)
    return integrate.tplquad(f, 0, 1, 0, np.inf, 0, np.inf, epsabs=1e-10, epsrel=1e-10)[0]


def test_lb1_against_3d_quadrature():
    # one M = 2, N = 2, K = 2 point; k = 2 user with S1 = 3, S2 = 1.2, S3 = 4, 3 bits
    c = lc(3.0, 1.2, 4.0, 2.0 ** -3)
    b = c.S3 * c.delta
    oracle = theta_3d(c.S1, b) - theta_3d(c.S2, b)
    assert rate_lb1(c, 2, 2).value == pytest.approx(oracle, abs=1e-4)
    c1 = lc(3.0, 0.0, 4.0, 2.0 ** -3)
    inner = integrate.quad(lambda y: math.log2(1 + b * y) * math.exp(-y), 0, np.inf, epsrel=1e-12)[0]
    assert rate_lb1(c1, 2, 1).value == pytest.approx(theta_3d(c1.S1, b) - inner, abs=1e-4)


@pytest.mark.filterwarnings("ignore::nomalf.errors.LossOfPrecisionWarning")
@given(S1=st.floats(0.01, 1e4), frac=st.floats(0, 0.99), S3=st.floats(0.01, 1e4), M=st.sampled_from([3, 4, 6]),
       B1=st.integers(0, 40), dB=st.integers(1, 10))
@settings(max_examples=60, deadline=None)
def test_lb1_monotone_in_bits(S1, frac, S3, M, B1, dB):
    k = 2 if frac > 0 else 1
    lo = rate_lb1(lc(S1, S1 * frac, S3, 2.0 ** (-B1 / (M - 1))), M, k).value
    hi = rate_lb1(lc(S1, S1 * frac, S3, 2.0 ** (-(B1 + dB) / (M - 1))), M, k).value
    assert hi >= lo - 1e-7 * max(1, abs(lo))


@pytest.mark.filterwarnings("ignore::nomalf.errors.LossOfPrecisionWarning")
@given(S1=st.floats(0.01, 1e3), S2=st.floats(0, 10), S3=st.floats(0.01, 1e3), M=st.sampled_from([3, 4, 6]))
@settings(max_examples=60, deadline=None)
def test_lb1_monotone_in_own_power(S1, S2, S3, M):
    d = 2.0 ** (-9 / (M - 1))
    k = 2 if S2 > 0 else 1
    lo = rate_lb1(lc(S2 + S1, S2, S3, d), M, k).value
    hi = rate_lb1(lc(S2 + 2 * S1, S2, S3, d), M, k).value
    assert hi >= lo - 1e-7 * max(1, abs(lo))


def test_lb1_below_ideal():
    rng = np.random.default_rng(0)
    for _ in range(50):
        S1 = 10 ** rng.uniform(-1, 4)
        S2 = S1 * rng.uniform(0, 0.9)
        c = lc(S1, S2, 10 ** rng.uniform(-1, 4), 2.0 ** -rng.uniform(0, 12))
        assert rate_lb1(c, 6, 2).value <= rate_ideal(c, 6, 2).value + 1e-9


def test_loss_ub_limits():
    assert rate_loss_ub(lc(5.0, 0.0, 100.0, 0.0), 6).value == 0.0
    prev = math.inf
    for B in range(0, 60, 5):
        v = rate_loss_ub(lc(50.0, 10.0, 100.0, 2.0 ** (-B / 5)), 6).value
        assert v < prev
        prev = v
    assert prev > 0


def test_coefficients_validated():
    with pytest.raises(ConfigError):
        lc(1.0, 2.0)
    with pytest.raises(ConfigError):
        lc(1.0, 0.0, -1.0)
    with pytest.raises(ConfigError):
        lc(1.0, 0.0, 1.0, 1.5)
    with pytest.raises(ConfigError):
        rate_lb1(lc(1.0), 4, 0)


def test_link_coefficients(d1):
    P = np.array([[3.0, 7.0], [2.0, 5.0], [1.0, 4.0]])
    L = link_coefficients(d1, P, np.array([[10, 0], [5, 5], [0, 20]]))
    r = d1.cnr
    assert L.S1[0, 1] == pytest.approx(r[0, 1] * 10)
    assert L.S2[0, 1] == pytest.approx(r[0, 1] * 3)
    assert L.S2[2, 0] == 0
    assert L.S3[1, 0] == pytest.approx(r[1, 0] * 15)
    assert L.delta[2, 1] == pytest.approx(2.0 ** -4)


def test_lb2_tilde_cases(d1):
    phi = np.array([0.5, 0.5, 0.0])
    assert rate_lb2_tilde(phi, d1, 10, 2, 0).value == 0.0
    r = d1.cnr[0, 0]
    P, K, M = d1.config.P, d1.K, d1.M
    big = rate_lb2_tilde(phi, d1, 1e5, 0, 0).value
    assert big == pytest.approx(math.log2(1 + r * 0.5 * P / K * (M - 1) / M), rel=1e-12)
    with pytest.raises(ConfigError):
        rate_lb2_tilde(np.array([0.7, 0.7, 0.0]), d1, 10, 0, 0)


def test_lb2_substitution_identity():
    # inserting the relaxed bits collapses the residual term into a geometric mean
    rng = np.random.default_rng(21)
    sc = random_scenario(rng, N=3, K=3, M=8)
    phi = np.array([0.4, 0.35, 0.25])
    power = power_from_phi(sc, phi)
    bits = bits_closed_form(sc, power)
    cfg = sc.config
    M, N, K, B, P = cfg.M, sc.N, sc.K, cfg.B, cfg.P
    L = link_coefficients(sc, power.per_user, 0)
    G = quant_gamma(M)
    geo = math.exp(np.mean(np.log(L.S3 / (1 + L.S2))))
    for n in range(N):
        for k in range(K):
            D = M / (M - 1) + L.S2[n, k] + G * 2.0 ** (-B / (N * K * (M - 1))) * geo * (1 + L.S2[n, k])
            direct = math.log2(1 + sc.cnr[n, k] * phi[n] * P / K / D)
            assert rate_lb2_tilde(phi, sc, bits, n, k).value == pytest.approx(direct, rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_fixed_point_objective_consistent(seed):
    # the scalar form used by the solver equals the LB2 objective at the fixed point
    rng = np.random.default_rng(seed)
    sc = random_scenario(rng, P_dbm=40.0)
    power = power_fixed_point(sc)
    sc2 = power.scenario
    if sc2.N < 2:
        pytest.skip("reduced to one cluster")
    cfg = sc2.config
    model = _PowerModel(np.asarray(sc2.cnr), cfg.M, cfg.K, cfg.P, cfg.B)
    assert model.objective(power.C_star) == pytest.approx(lb2_objective(sc2, power.phi), rel=1e-9)
