"""Feedback-bit and power allocation.

Bits: the relaxed water-filling solution, its nonnegative recurrence and the
unit-weight 0/1 knapsack that rounds it. Power: the fixed point in the scalar
C that couples the cluster fractions phi_n, with cluster reduction when the
weakest cluster cannot be supported. Users are indexed (n, k), 0-based, and
flattened in the column-major order i = n + N k used by the knapsack.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .analysis import link_coefficients, quant_gamma
from .errors import ConfigError, InfeasibleError
from .system import ClusteredScenario, SystemConfig, cluster_config, recluster

BIT_SCHEMES = ("proposed", "reference", "equal")
POWER_SCHEMES = ("joint", "equal")
SNAP = 1e-9


class AllocationNotice(UserWarning):
    """Advisory raised when an allocation falls back to a degenerate answer."""


def as_scenario(obj) -> ClusteredScenario:
    if isinstance(obj, ClusteredScenario):
        return obj
    if isinstance(obj, SystemConfig):
        return cluster_config(obj)
    raise TypeError(f"expected SystemConfig or ClusteredScenario, got {type(obj).__name__}")


@dataclass(frozen=True, eq=False)
class BitAllocation:
    bits: np.ndarray
    relaxed: np.ndarray
    total_used: int
    scheme: str = "proposed"

    def __post_init__(self):
        b = np.asarray(self.bits)
        if np.any(b < 0) or np.any(b != np.round(b)):
            raise ConfigError("bits must be nonnegative integers")
        b = b.astype(np.int64)
        if int(b.sum()) != self.total_used:
            raise ConfigError("total_used does not match the bit matrix")
        object.__setattr__(self, "bits", b)
        object.__setattr__(self, "relaxed", np.asarray(self.relaxed, dtype=float))


@dataclass(frozen=True, eq=False)
class PowerAllocation:
    phi: np.ndarray
    per_user: np.ndarray
    C_star: float
    n_active_clusters: int
    scenario: ClusteredScenario
    notes: tuple = field(default=())

    @property
    def cluster_power(self) -> np.ndarray:
        return self.per_user.sum(axis=1)


def _flat(x):
    """N x K -> vector in knapsack order i = n + N k."""
    return np.asarray(x).T.ravel()


def _unflat(v, N, K):
    return np.asarray(v).reshape(K, N).T


def _snap_floor(x):
    x = np.asarray(x, dtype=float)
    r = np.round(x)
    return np.floor(np.where(np.abs(x - r) < SNAP, r, x))


# ---------------------------------------------------------------------------
# power helpers

def equal_power(scenario) -> PowerAllocation:
    sc = as_scenario(scenario)
    N, K, P = sc.N, sc.K, sc.config.P
    phi = np.full(N, 1.0 / N)
    return PowerAllocation(phi, np.full((N, K), P / (N * K)), math.nan, N, sc)


def power_from_phi(scenario, phi, C_star=math.nan, notes=()) -> PowerAllocation:
    sc = as_scenario(scenario)
    phi = np.asarray(phi, dtype=float)
    per_user = np.repeat((phi * sc.config.P / sc.K)[:, None], sc.K, axis=1)
    return PowerAllocation(phi, per_user, C_star, sc.N, sc, tuple(notes))


# ---------------------------------------------------------------------------
# bits

def _interference_logs(scenario, power):
    L = link_coefficients(scenario, power.per_user, 0)
    return L.S2, L.S3


def bits_closed_form(scenario, power: PowerAllocation) -> np.ndarray:
    """Relaxed bits minimising sum log(1 + S2 + G 2^{-B/(M-1)} S3) with sum B.

    Real valued, possibly negative. With one cluster there is no inter-cluster
    interference to suppress and the answer is all zeros.
    """
    sc = as_scenario(scenario)
    cfg = sc.config
    S2, S3 = _interference_logs(sc, power)
    if sc.N == 1 or np.any(S3 <= 0):
        warnings.warn("no inter-cluster interference: feedback bits are moot, allocating none",
                      AllocationNotice, stacklevel=2)
        return np.zeros((sc.N, sc.K))
    c = (cfg.M - 1) * np.log2(S3 / (1.0 + S2))
    return cfg.B / (sc.N * sc.K) + c - c.mean()


def bits_nonneg_recurrence(relaxed, B: float):
    """Zero out negative users and re-solve on the rest until all are >= 0.

    Returns (relaxed', active mask). Only differences of ``relaxed`` matter,
    so re-solving on an active set A is B/|A| + x_i - mean_A(x).
    """
    x = np.asarray(relaxed, dtype=float)
    active = np.ones(x.shape, dtype=bool)
    out = x.copy()
    for _ in range(x.size):
        xa = x[active]
        vals = B / xa.size + xa - xa.mean()
        out = np.zeros_like(x)
        out[active] = vals
        neg = out < 0
        if not neg.any():
            break
        active &= ~neg
    return out, active


def knapsack_unit(gains, capacity: int) -> np.ndarray:
    """0/1 knapsack with unit weights by dynamic programming.

    Items are scanned in index order and taken only on strict improvement, so
    among equal-value choices the lower indices win. Returns a boolean mask.
    """
    g = np.asarray(gains, dtype=float)
    n = g.size
    cap = int(capacity)
    if cap < 0:
        raise ValueError("negative knapsack capacity")
    D = np.zeros((n + 1, cap + 1))
    take = np.zeros((n + 1, cap + 1), dtype=bool)
    for i in range(1, n + 1):
        for j in range(1, cap + 1):
            with_i = D[i - 1, j - 1] + g[i - 1]
            if with_i > D[i - 1, j]:
                D[i, j] = with_i
                take[i, j] = True
            else:
                D[i, j] = D[i - 1, j]
    mask = np.zeros(n, dtype=bool)
    j = cap
    for i in range(n, 0, -1):
        if take[i, j]:
            mask[i - 1] = True
            j -= 1
    return mask


def _round_with_gains(relaxed, B, gain_fn, N, K, scheme):
    rd = _snap_floor(relaxed)
    b_rd = _flat(rd).astype(np.int64)
    B_re = int(B) - int(b_rd.sum())
    assert B_re >= 0, "floor allocation exceeds the budget"
    gains = gain_fn(b_rd)
    mask = knapsack_unit(gains, B_re)
    short = B_re - int(mask.sum())
    if short > 0:
        # zero-gain items left the budget unspent; hand it out by index
        for i in np.flatnonzero(~mask)[:short]:
            mask[i] = True
    bits = _unflat(b_rd + mask, N, K)
    return BitAllocation(bits, relaxed, int(bits.sum()), scheme)


def loss_gains(scenario, power, b_rd) -> np.ndarray:
    """Decrease of the loss upper bound from one extra bit, knapsack order."""
    sc = as_scenario(scenario)
    M = sc.M
    S2, S3 = (_flat(x) for x in _interference_logs(sc, power))
    G = quant_gamma(M)
    b = np.asarray(b_rd, dtype=float)
    return (np.log2(1.0 + S2 + G * np.exp2(-b / (M - 1)) * S3)
            - np.log2(1.0 + S2 + G * np.exp2(-(b + 1) / (M - 1)) * S3))


def bits_knapsack_dp(relaxed, scenario, power: PowerAllocation) -> BitAllocation:
    sc = as_scenario(scenario)
    return _round_with_gains(relaxed, sc.config.B, lambda b: loss_gains(sc, power, b),
                             sc.N, sc.K, "proposed")


def bits_reference(scenario, power: PowerAllocation) -> BitAllocation:
    """Comparison allocator: minimise sum_i 2^{-B_i/(M-1)} S3_i.

    Same water-filling structure with c_i = (M-1) log2 S3_i; rounding uses the
    decrease of that objective as knapsack gains.
    """
    sc = as_scenario(scenario)
    cfg = sc.config
    _, S3 = _interference_logs(sc, power)
    if sc.N == 1 or np.any(S3 <= 0):
        z = np.zeros((sc.N, sc.K), dtype=np.int64)
        return BitAllocation(z, z.astype(float), 0, "reference")
    c = (cfg.M - 1) * np.log2(S3)
    relaxed, _ = bits_nonneg_recurrence(cfg.B / (sc.N * sc.K) + c - c.mean(), cfg.B)
    s3 = _flat(S3)

    def gains(b):
        b = np.asarray(b, dtype=float)
        return s3 * (np.exp2(-b / (cfg.M - 1)) - np.exp2(-(b + 1) / (cfg.M - 1)))

    return _round_with_gains(relaxed, cfg.B, gains, sc.N, sc.K, "reference")


def equal_bits(scenario) -> BitAllocation:
    """B/(NK) each, the remainder going to the lowest knapsack indices."""
    sc = as_scenario(scenario)
    N, K, B = sc.N, sc.K, sc.config.B
    q, rem = divmod(B, N * K)
    v = np.full(N * K, q, dtype=np.int64)
    v[:rem] += 1
    bits = _unflat(v, N, K)
    return BitAllocation(bits, np.full((N, K), B / (N * K)), int(bits.sum()), "equal")


def allocate_bits(scenario, power: PowerAllocation, scheme: str = "proposed") -> BitAllocation:
    sc = as_scenario(scenario)
    if scheme == "equal":
        return equal_bits(sc)
    if scheme == "reference":
        return bits_reference(sc, power)
    if scheme != "proposed":
        raise ConfigError(f"unknown bit scheme {scheme!r}; choose from {BIT_SCHEMES}")
    if sc.N == 1:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", AllocationNotice)
            relaxed = bits_closed_form(sc, power)
        z = np.zeros((sc.N, sc.K), dtype=np.int64)
        return BitAllocation(z, relaxed, 0, "proposed")
    relaxed, _ = bits_nonneg_recurrence(bits_closed_form(sc, power), sc.config.B)
    return bits_knapsack_dp(relaxed, sc, power)


def relaxed_objective(scenario, power, bits) -> float:
    """sum_i log2(1 + S2 + G 2^{-B_i/(M-1)} S3), the bit-dependent loss part."""
    sc = as_scenario(scenario)
    S2, S3 = _interference_logs(sc, power)
    b = np.asarray(bits, dtype=float)
    return float(np.sum(np.log2(1.0 + S2 + quant_gamma(sc.M) * np.exp2(-b / (sc.M - 1)) * S3)))


def reference_objective(scenario, power, bits) -> float:
    sc = as_scenario(scenario)
    _, S3 = _interference_logs(sc, power)
    return float(np.sum(np.exp2(-np.asarray(bits, dtype=float) / (sc.M - 1)) * S3))


# ---------------------------------------------------------------------------
# power fixed point

@dataclass(frozen=True)
class _PowerModel:
    """phi(C) and the right-hand side RHS(C) of the fixed point C = RHS(C)."""

    r: np.ndarray      # N x K gains over noise
    M: int
    K: int
    P: float
    B: int

    @property
    def N(self):
        return self.r.shape[0]

    @property
    def s(self):
        inv = 1.0 / self.r[:, 0]
        return self.N * inv - inv.sum()

    @property
    def kappa(self):
        # coefficient of C inside the bracket: G 2^{-B/(NK(M-1))} geomean(r) / P
        M, N, K = self.M, self.N, self.K
        return (quant_gamma(M) * 2.0 ** (-self.B / (N * K * (M - 1)))
                * math.exp(np.mean(np.log(self.r))) / self.P)

    def bracket(self, C):
        return self.M / ((self.M - 1) * self.P) + self.kappa * C

    def phi(self, C):
        return 1.0 / self.N - self.K / self.N * self.bracket(C) * self.s

    def rhs(self, C):
        N, K, P = self.N, self.K, self.P
        ph = self.phi(C)
        q = np.arange(1, K)
        terms = 1.0 / P + self.r[:, 1:] * q[None, :] * ph[:, None] / K
        with np.errstate(divide="ignore", invalid="ignore"):
            logv = (math.log(P) / K + np.sum(np.log1p(-ph)) / N
                    - np.sum(np.log(terms)) / (N * K))
        return math.exp(logv) if np.isfinite(logv) or logv == -np.inf else math.nan

    def c_feasible(self):
        """Largest C keeping phi_N >= 0 (inf when all clusters are alike)."""
        sN = self.s.max()
        if sN <= 1e-15 * np.abs(1.0 / self.r[:, 0]).max() * self.N:
            return math.inf
        return (1.0 / (self.K * sN) - self.M / ((self.M - 1) * self.P)) / self.kappa

    def objective(self, C):
        """sum_n log2(1 + r_n1 phi_n P / (K D_n1)) with D_n1 evaluated at C."""
        ph = self.phi(C)
        D = self.M / (self.M - 1) + self.kappa * self.P * self.rhs(C)
        return float(np.sum(np.log2(1.0 + self.r[:, 0] * ph * self.P / (self.K * D))))


def _solve_C(model: _PowerModel, grid=64, damping=0.5, max_iter=200):
    """Feasible roots of C - RHS(C); returns (C*, phi*) or None."""
    cf = model.c_feasible()
    if math.isinf(cf):
        # phi does not depend on C; the fixed point is RHS itself
        C = model.rhs(1.0)
        return C, model.phi(C)
    if cf <= 0:
        return None
    f = lambda C: C - model.rhs(C)
    Cs = cf * np.logspace(-12, 0, grid)
    fs = np.array([f(C) for C in Cs])
    roots = []
    for i in range(grid - 1):
        if fs[i] == 0:
            roots.append(Cs[i])
        elif fs[i] * fs[i + 1] < 0:
            roots.append(brentq(f, Cs[i], Cs[i + 1], xtol=1e-300, rtol=4 * np.finfo(float).eps,
                                maxiter=500))
    if fs[-1] == 0:
        roots.append(Cs[-1])
    C = model.rhs(0.5 * cf)
    for _ in range(max_iter):
        if not (0 < C <= cf):
            break
        Cn = (1 - damping) * C + damping * model.rhs(C)
        if abs(Cn - C) <= 1e-13 * abs(C):
            if 0 < Cn <= cf and all(abs(Cn - c) > 1e-9 * c for c in roots):
                roots.append(Cn)
            break
        C = Cn
    best = None
    for C in roots:
        ph = model.phi(C)
        if np.any(ph < 0) or np.any(ph > 1) or ph[-1] <= 0:
            continue
        val = model.objective(C)
        if best is None or val > best[0]:
            best = (val, C, ph)
    if best is None:
        return None
    return best[1], best[2]


def _reduced(sc: ClusteredScenario) -> ClusteredScenario:
    N, K, M = sc.N, sc.K, sc.M
    n_users = N * K
    if n_users % (N - 1) == 0:
        K2 = n_users // (N - 1)
        if M > (N - 2) * K2:
            try:
                return recluster(sc, N - 1, K2)
            except ConfigError:
                pass
    return recluster(sc, N - 1, K)


def power_fixed_point(scenario, reduce_clusters: bool = True) -> PowerAllocation:
    """Cluster power fractions phi and C* from the fixed point.

    If no feasible root keeps every phi_n > 0 the number of clusters drops by
    one (users re-clustered; see ``_reduced``) until one is found. With
    ``reduce_clusters=False`` that case raises InfeasibleError instead.
    """
    sc = as_scenario(scenario)
    notes = []
    while True:
        cfg = sc.config
        if sc.N == 1:
            return power_from_phi(sc, [1.0], math.nan, notes)
        model = _PowerModel(np.asarray(sc.cnr), cfg.M, cfg.K, cfg.P, cfg.B)
        sol = _solve_C(model)
        if sol is not None:
            C, ph = sol
            ph = np.clip(ph, 0.0, None)
            ph = ph / ph.sum()
            return power_from_phi(sc, ph, C, notes)
        if not reduce_clusters:
            raise InfeasibleError(f"power P = {cfg.P:g} mW cannot support N = {sc.N} clusters")
        nxt = _reduced(sc)
        notes.append(f"reduced clusters {sc.N}x{sc.K} -> {nxt.N}x{nxt.K}")
        sc = nxt


def power_residual(power: PowerAllocation) -> float:
    """|C* - RHS(C*)| / C* for a fixed-point allocation."""
    sc = power.scenario
    if sc.N == 1 or not math.isfinite(power.C_star):
        return 0.0
    cfg = sc.config
    model = _PowerModel(np.asarray(sc.cnr), cfg.M, cfg.K, cfg.P, cfg.B)
    return abs(power.C_star - model.rhs(power.C_star)) / power.C_star


def water_filling_phi(scenario) -> np.ndarray:
    """The B -> infinity limit: 1/N - K M / (N P (M-1)) * s_n."""
    sc = as_scenario(scenario)
    cfg = sc.config
    inv = 1.0 / np.asarray(sc.cnr)[:, 0]
    s = sc.N * inv - inv.sum()
    return 1.0 / sc.N - sc.K * cfg.M / (sc.N * cfg.P * (cfg.M - 1)) * s


def allocate_power(scenario, scheme: str = "joint", reduce_clusters: bool = True) -> PowerAllocation:
    if scheme == "equal":
        return equal_power(scenario)
    if scheme != "joint":
        raise ConfigError(f"unknown power scheme {scheme!r}; choose from {POWER_SCHEMES}")
    return power_fixed_point(scenario, reduce_clusters)


def joint_optimize(scenario, reduce_clusters: bool = True):
    """Fixed-point power, then relaxed bits, recurrence and knapsack rounding."""
    power = power_fixed_point(scenario, reduce_clusters)
    return power, allocate_bits(power.scenario, power, "proposed")


def lb2_objective(scenario, phi, bits=None) -> float:
    """sum_n of the k = 1 LB2 terms for fractions phi.

    ``bits`` defaults to the relaxed closed form at those fractions, which is
    what the fixed point optimises.
    """
    from .analysis import rate_lb2_tilde

    sc = as_scenario(scenario)
    power = power_from_phi(sc, phi)
    if bits is None:
        bits = bits_closed_form(sc, power)
    return float(sum(rate_lb2_tilde(phi, sc, bits, n, 0).value for n in range(sc.N)))


# ---------------------------------------------------------------------------
# high-power asymptotics

@dataclass(frozen=True)
class AsymptoticBits:
    tilde: np.ndarray    # N x K growth-regime approximation
    hat: np.ndarray      # N, the finite-B cap on the strongest users
    capped: np.ndarray   # N x K: min(hat, tilde) for k = 1, max(0, tilde) otherwise


def bits_asymptotic(scenario, P: float | None = None) -> AsymptoticBits:
    """Equal-power high-P approximations of the relaxed bits."""
    sc = as_scenario(scenario)
    cfg = sc.config
    M, N, K, B = cfg.M, sc.N, sc.K, cfg.B
    P = cfg.P if P is None else float(P)
    lr1 = np.log2(np.asarray(sc.cnr)[:, 0])
    base = B / (N * K) - (M - 1) / (N * K) * lr1.sum() + (M - 1) / K * sum(math.log2(l) for l in range(1, K))
    lp = math.log2(P / (N * K))
    tilde = np.empty((N, K))
    tilde[:, 0] = base + (M - 1) * (1 - 1 / K) * lp + (M - 1) * lr1
    for k in range(1, K):
        tilde[:, k] = base - (M - 1) / K * lp - (M - 1) * math.log2(k)
    hat = B / N + (M - 1) * lr1 - (M - 1) / N * lr1.sum()
    capped = np.maximum(tilde, 0.0)
    capped[:, 0] = np.minimum(hat, tilde[:, 0])
    return AsymptoticBits(tilde, hat, capped)
