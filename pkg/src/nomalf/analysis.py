"""Closed-form rate bounds for the limited-feedback NOMA downlink.

Everything here is per user (n, k) and takes the SNR-like link coefficients

    S1 = r * sum_{j<=k} P_{n,j},   S2 = r * sum_{j<k} P_{n,j},
    S3 = r * sum_{i!=n} sum_j P_{i,j},   delta = 2^{-B_{n,k}/(M-1)},

with r = d^{-alpha} / sigma^2 the user's large-scale gain over noise.
Rates are in bits/s/Hz.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, LossOfPrecisionWarning
from .specfun import EULER, LOG2E, exp_int_en_scaled, log2_gamma_sum, theta

# the bits-independent part of the LB2 bound is never below -LB2_CONSTANT
LB2_CONSTANT = LOG2E * EULER
KINDS = ("LB1", "LB2", "UB_loss", "ideal")


def quant_gamma(M: int) -> float:
    """Gamma((2M-1)/(M-1)), the mean-error factor of RVQ at high resolution."""
    return math.gamma((2 * M - 1) / (M - 1))


@dataclass(frozen=True)
class LinkCoefficients:
    S1: float
    S2: float
    S3: float
    delta: float

    def __post_init__(self):
        for name in ("S1", "S2", "S3"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ConfigError(f"{name} must be finite and nonnegative, got {v!r}")
        if self.S2 > self.S1:
            raise ConfigError("S2 cannot exceed S1")
        if not (0.0 <= self.delta <= 1.0):
            raise ConfigError(f"delta must lie in [0, 1], got {self.delta!r}")


@dataclass(frozen=True)
class RateBound:
    value: float
    kind: str
    numerics_flags: tuple = ()

    def __float__(self):
        return float(self.value)


@dataclass(frozen=True)
class LinkTable:
    """Link coefficients for all users as N x K arrays."""

    S1: np.ndarray
    S2: np.ndarray
    S3: np.ndarray
    delta: np.ndarray

    def at(self, n: int, k: int) -> LinkCoefficients:
        return LinkCoefficients(float(self.S1[n, k]), float(self.S2[n, k]),
                                float(self.S3[n, k]), float(self.delta[n, k]))


def _unpack(obj):
    """(config, cnr) from a ClusteredScenario or a SystemConfig taken as already ordered."""
    if hasattr(obj, "config"):
        return obj.config, np.asarray(obj.cnr)
    return obj, np.asarray(obj.cnr)


def link_coefficients(scenario, powers, bits) -> LinkTable:
    """S1, S2, S3 and delta for every user from per-user powers (mW) and bits."""
    cfg, r = _unpack(scenario)
    P = np.asarray(powers, dtype=float)
    b = np.broadcast_to(np.asarray(bits, dtype=float), r.shape)
    if P.shape != r.shape:
        raise ConfigError(f"powers must be N x K = {r.shape}, got {P.shape}")
    cum = np.cumsum(P, axis=1)
    Pn = cum[:, -1]
    S1 = r * cum
    S2 = r * (cum - P)
    S3 = r * (Pn.sum() - Pn)[:, None]
    delta = np.exp2(-b / (cfg.M - 1))
    return LinkTable(S1, S2, S3, delta)


def _theta(a, b, M, flags):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", LossOfPrecisionWarning)
        res = theta(a, b, M)
    if caught or res.flags:
        flags.update(res.flags or ("loss_of_precision",))
    return res.value


def rate_lb1(c: LinkCoefficients, M: int, k: int) -> RateBound:
    """Lower bound on the ergodic rate of user (n, k); k is 1-based.

    The residual-interference argument is b = S3 delta / (M-1); with a single
    cluster (S3 = 0) both terms reduce to their b -> 0 limits.
    """
    if k < 1:
        raise ConfigError("k is 1-based")
    flags = set()
    b = c.S3 * c.delta / (M - 1)
    if k == 1:
        val = _theta(c.S1, b, M, flags) - log2_gamma_sum(b, M - 1)
    else:
        val = _theta(c.S1, b, M, flags) - _theta(c.S2, b, M, flags)
    if val < 0:
        flags.add("negative")
    return RateBound(val, "LB1", tuple(sorted(flags)))


def _log2_exp_e1(s):
    # E[log2(1 + s X)], X ~ Exp(1)
    if s <= 0:
        return 0.0
    return LOG2E * exp_int_en_scaled(1, 1.0 / s)


def rate_loss_ub(c: LinkCoefficients, M: int) -> RateBound:
    """Upper bound on the rate lost to quantization, R_ideal - R."""
    val = (math.log2(1.0 + c.S2 + quant_gamma(M) * c.delta * c.S3)
           - _log2_exp_e1(c.S2))
    return RateBound(val, "UB_loss")


def rate_ideal(c: LinkCoefficients, M: int, k: int) -> RateBound:
    """Ergodic rate with perfect CSI; |h w|^2 ~ Exp(1) under ZF."""
    val = _log2_exp_e1(c.S1) - (_log2_exp_e1(c.S2) if k > 1 else 0.0)
    return RateBound(val, "ideal")


def rate_lb2_tilde(phi, scenario, bits, n: int, k: int) -> RateBound:
    """Power-allocation objective term for user (n, k), 0-based indices.

    Equal power inside clusters: P_{n,k} = phi_n P / K. ``bits`` may be relaxed
    (real valued).
    """
    cfg, r = _unpack(scenario)
    phi = np.asarray(phi, dtype=float)
    if np.any(phi < 0) or phi.sum() > 1 + 1e-12:
        raise ConfigError("phi must be nonnegative with sum <= 1")
    if phi[n] == 0:
        return RateBound(0.0, "LB2")
    M, K, P = cfg.M, cfg.K, cfg.P
    Pn = phi[n] * P
    rr = r[n, k]
    b = float(np.broadcast_to(np.asarray(bits, dtype=float), r.shape)[n, k])
    S2 = rr * k * Pn / K
    S3 = rr * (P - Pn)
    den = M / (M - 1) + S2 + quant_gamma(M) * 2.0 ** (-b / (M - 1)) * S3
    return RateBound(math.log2(1.0 + rr * Pn / K / den), "LB2")


# ---------------------------------------------------------------------------
# tables over all users

def lb1_table(scenario, powers, bits):
    """LB1 for every user; returns (values N x K, set of numerics flags)."""
    cfg, _ = _unpack(scenario)
    L = link_coefficients(scenario, powers, bits)
    out = np.empty(L.S1.shape)
    flags = set()
    for n, k in np.ndindex(*out.shape):
        rb = rate_lb1(L.at(n, k), cfg.M, k + 1)
        out[n, k] = rb.value
        flags.update(rb.numerics_flags)
    return out, flags


def ideal_table(scenario, powers) -> np.ndarray:
    cfg, _ = _unpack(scenario)
    L = link_coefficients(scenario, powers, 0)
    return np.array([[rate_ideal(L.at(n, k), cfg.M, k + 1).value for k in range(cfg.K)]
                     for n in range(cfg.N)])


def loss_ub_table(scenario, powers, bits) -> np.ndarray:
    cfg, _ = _unpack(scenario)
    L = link_coefficients(scenario, powers, bits)
    return np.array([[rate_loss_ub(L.at(n, k), cfg.M).value for k in range(cfg.K)]
                     for n in range(cfg.N)])


def lb2_tilde_table(phi, scenario, bits) -> np.ndarray:
    cfg, _ = _unpack(scenario)
    return np.array([[rate_lb2_tilde(phi, scenario, bits, n, k).value for k in range(cfg.K)]
                     for n in range(cfg.N)])
