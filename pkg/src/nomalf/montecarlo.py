"""Monte Carlo estimates of the per-user ergodic rates after SIC.

Trials are grouped in fixed-size blocks; block ``j`` draws from a Philox
stream keyed by (seed, j), so results do not depend on the thread count or
the schedule. Per-block means and centred second moments are merged in block
order.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _jit
from ._kernels import zf_beams, zf_rates
from .alloc import (BitAllocation, PowerAllocation, allocate_bits, allocate_power, as_scenario,
                    joint_optimize)
from .channel import draw_channels, rvq_quantize, write_trace
from .errors import ConfigError, NumericalDegeneracyError
from .system import QUANTIZERS, ClusteredScenario, exchange_clustering

BLOCK = 4096
MIN_TRIALS = 100
CSI_MODELS = ("practical", "alt")


@dataclass(frozen=True, eq=False)
class SimResult:
    per_user_rate: np.ndarray
    per_user_se: np.ndarray
    esr: float
    esr_se: float
    trials: int
    seed: int
    config_hash: str
    quantizer: str = "rvq"
    csi_model: str = "practical"
    samples: np.ndarray | None = None   # per-trial ESR when requested


def block_rng(seed: int, block: int) -> np.random.Generator:
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, block], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _as_bits(bits, N, K):
    if isinstance(bits, BitAllocation):
        bits = bits.bits
    b = np.broadcast_to(np.asarray(bits), (N, K))
    if np.any(b < 0) or np.any(b != np.floor(b)):
        raise ConfigError("bits must be nonnegative integers")
    return b.astype(np.int64)


def _as_powers(power, N, K):
    if isinstance(power, PowerAllocation):
        power = power.per_user
    p = np.asarray(power, dtype=float)
    if p.shape != (N, K):
        raise ConfigError(f"per-user powers must be N x K = {(N, K)}, got {p.shape}")
    if np.any(p < 0):
        raise ConfigError("powers must be nonnegative")
    return p


def draw_block(rng, M, N, K, bits, n, quantizer="rvq", csi_model="practical"):
    """Channels, quantized directions and steering draws for ``n`` trials.

    Returns (h_eff, h_hat, g, cdi) where h_eff is the channel the users see:
    the true one, or for ``csi_model='alt'`` the constant-angle substitute
    ||h|| (sqrt(1-d) h_hat + sqrt(d) e~) with d = 2^{-B/(M-1)}.
    """
    h = draw_channels(rng, M, N, K, size=n)
    q = rvq_quantize(h, np.broadcast_to(bits, (n, N, K)), rng, method=quantizer)
    g = (rng.standard_normal((n, N, M)) + 1j * rng.standard_normal((n, N, M))) * math.sqrt(0.5)
    if csi_model == "alt":
        d = np.exp2(-np.asarray(bits, dtype=float) / (M - 1))[None, :, :, None]
        nrm = np.linalg.norm(h, axis=-1, keepdims=True)
        h = nrm * (np.sqrt(1.0 - d) * q.h_hat + np.sqrt(d) * q.e_tilde)
    elif csi_model != "practical":
        raise ConfigError(f"unknown CSI model {csi_model!r}; choose from {CSI_MODELS}")
    return h, q.h_hat, g, q


def _run_block(j, seed, n, M, N, K, bits, powers, cnr, quantizer, csi_model, backend):
    rng = block_rng(seed, j)
    h, hh, g, _ = draw_block(rng, M, N, K, bits, n, quantizer, csi_model)
    rates, bad = zf_rates(h, hh, g, powers, cnr, backend=backend)
    if bad:
        raise NumericalDegeneracyError(f"{bad} rank-deficient zero-forcing problems in block {j}")
    return rates


def _moments(x):
    m = x.mean(axis=0)
    return x.shape[0], m, ((x - m) ** 2).sum(axis=0)


def _merge(a, b):
    na, ma, Ma = a
    nb, mb, Mb = b
    n = na + nb
    d = mb - ma
    return n, ma + d * (nb / n), Ma + Mb + d * d * (na * nb / n)


def _plan(trials, block):
    nblocks = -(-trials // block)
    return [(j, min(block, trials - j * block)) for j in range(nblocks)]


def simulate(scenario, power, bits, trials: int | None = None, seed: int | None = None,
             quantizer: str = "rvq", csi_model: str = "practical", threads: int | None = None,
             return_samples: bool = False, trace_path=None, backend: str | None = None,
             block: int = BLOCK) -> SimResult:
    """Empirical ergodic rates of every user under ZF beamforming and SIC.

    ``power`` and ``bits`` are allocations or plain N x K arrays. Defaults for
    ``trials`` and ``seed`` come from the scenario's config.
    """
    sc = as_scenario(scenario)
    cfg = sc.config
    N, K, M = sc.N, sc.K, sc.M
    trials = cfg.mc_trials if trials is None else int(trials)
    seed = cfg.rng_seed if seed is None else int(seed)
    if trials < MIN_TRIALS:
        raise ConfigError(f"trials must be >= {MIN_TRIALS} for a meaningful standard error")
    if quantizer not in QUANTIZERS:
        raise ConfigError(f"unknown quantizer {quantizer!r}; choose from {QUANTIZERS}")
    b = _as_bits(bits, N, K)
    p = _as_powers(power, N, K)
    cnr = np.asarray(sc.cnr, dtype=float)
    threads = _jit.n_threads() if threads is None else max(1, int(threads))

    def job(item):
        j, n = item
        r = _run_block(j, seed, n, M, N, K, b, p, cnr, quantizer, csi_model, backend)
        esr = r.sum(axis=(1, 2))
        return _moments(r), _moments(esr), (esr if return_samples else None)

    plan = _plan(trials, block)
    if threads > 1 and len(plan) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(job, plan))
    else:
        parts = [job(item) for item in plan]
    acc, acc_s = parts[0][0], parts[0][1]
    for pu, ps, _ in parts[1:]:
        acc = _merge(acc, pu)
        acc_s = _merge(acc_s, ps)
    n, mean, M2 = acc
    se = np.sqrt(M2 / (n - 1) / n)
    ns, ms, M2s = acc_s
    samples = np.concatenate([x[2] for x in parts]) if return_samples else None
    if trace_path is not None:
        dump_trace(trace_path, sc, b, seed, min(trials, block), quantizer, csi_model)
    return SimResult(mean, se, float(mean.sum()), float(math.sqrt(M2s / (ns - 1) / ns)), trials, seed,
                     sc.digest(), quantizer, csi_model, samples)


def simulate_alt_csi_model(scenario, power, bits, **kw) -> SimResult:
    """``simulate`` with the constant quantization angle 2^{-B/(M-1)} per realization."""
    kw["csi_model"] = "alt"
    return simulate(scenario, power, bits, **kw)


def dump_trace(path, scenario, bits, seed, n, quantizer="rvq", csi_model="practical"):
    """Write the realizations of the first block (n trials) to a binary trace."""
    sc = as_scenario(scenario)
    N, K, M = sc.N, sc.K, sc.M
    rng = block_rng(seed, 0)
    h, hh, g, q = draw_block(rng, M, N, K, _as_bits(bits, N, K), n, quantizer, csi_model)
    w = zf_beams(hh, g)
    write_trace(path, h, hh, q.e_tilde, w, q.cos2_theta, q.sin2_theta)


def simulate_oma(scenario, trials: int | None = None, seed: int | None = None,
                 quantizer: str = "rvq", threads: int | None = None, backend: str | None = None,
                 return_samples: bool = False) -> SimResult:
    """Orthogonal baseline: the k-th users of all clusters share a 1/K time slot.

    Within a slot the N users are served by ZF beams with power P/N each and
    feed back B/(NK) bits each (remainder to the lowest indices).
    """
    sc = as_scenario(scenario)
    cfg = sc.config
    N, K, M = sc.N, sc.K, sc.M
    trials = cfg.mc_trials if trials is None else int(trials)
    seed = cfg.rng_seed if seed is None else int(seed)
    if trials < MIN_TRIALS:
        raise ConfigError(f"trials must be >= {MIN_TRIALS} for a meaningful standard error")
    from .alloc import equal_bits

    b = equal_bits(sc).bits
    p = np.full((N, 1), cfg.P / N)
    cnr = np.asarray(sc.cnr, dtype=float)
    threads = _jit.n_threads() if threads is None else max(1, int(threads))

    def job(item):
        j, n = item
        rng = block_rng(seed, j)
        h, hh, g, _ = draw_block(rng, M, N, K, b, n, quantizer)
        out = np.empty((n, N, K))
        for k in range(K):
            g_k = g if k == 0 else (rng.standard_normal((n, N, M))
                                    + 1j * rng.standard_normal((n, N, M))) * math.sqrt(0.5)
            r, bad = zf_rates(h[:, :, k:k + 1], hh[:, :, k:k + 1], g_k, p, cnr[:, k:k + 1], backend)
            if bad:
                raise NumericalDegeneracyError("rank-deficient zero-forcing problem")
            out[:, :, k] = r[:, :, 0] / K
        esr = out.sum(axis=(1, 2))
        return _moments(out), _moments(esr), (esr if return_samples else None)

    plan = _plan(trials, BLOCK)
    if threads > 1 and len(plan) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(job, plan))
    else:
        parts = [job(item) for item in plan]
    acc, acc_s = parts[0][0], parts[0][1]
    for pu, ps, _ in parts[1:]:
        acc = _merge(acc, pu)
        acc_s = _merge(acc_s, ps)
    n, mean, M2 = acc
    ns, ms, M2s = acc_s
    samples = np.concatenate([x[2] for x in parts]) if return_samples else None
    return SimResult(mean, np.sqrt(M2 / (n - 1) / n), float(mean.sum()),
                     float(math.sqrt(M2s / (ns - 1) / ns)), trials, seed, sc.digest(), quantizer,
                     "oma", samples)


def sic_rates(scenario, power, bits, trials: int, seed: int = 0, quantizer: str = "rvq"):
    """Per-trial rates at which user k can decode the stream of user j >= k.

    Returns an array (T, N, K, K); entry [t, n, k, j] is the rate of stream j
    at receiver k (intra-cluster interference from streams 0..j-1 after SIC).
    The diagonal is each user's own rate.
    """
    sc = as_scenario(scenario)
    N, K, M = sc.N, sc.K, sc.M
    b = _as_bits(bits, N, K)
    p = _as_powers(power, N, K)
    rng = block_rng(seed, 0)
    h, hh, g, _ = draw_block(rng, M, N, K, b, trials, quantizer)
    w = zf_beams(hh, g)
    gains = np.abs(np.einsum("tnkm,tim->tnki", h, w)) ** 2
    own = np.einsum("tnkn->tnk", gains)
    ptot = p.sum(axis=1)
    inter = gains @ ptot - own * ptot[None, :, None]
    cnr = np.asarray(sc.cnr)
    intra = np.concatenate([np.zeros((N, 1)), np.cumsum(p, axis=1)[:, :-1]], axis=1)
    a = cnr[None, :, :, None]
    o = own[..., None]
    sinr = a * o * p[None, :, None, :] / (a * (o * intra[None, :, None, :] + inter[..., None]) + 1.0)
    return np.log2(1.0 + sinr)


@dataclass(frozen=True)
class ClusteringOutcome:
    perm: tuple
    esr: float
    esr_se: float
    loss: float        # ESR(identity) - ESR(perm)
    loss_se: float     # paired standard error of the loss


def clustering_experiment(scenario, perms, column: int = 2, trials: int | None = None,
                          seed: int | None = None, quantizer: str = "rvq",
                          threads: int | None = None) -> dict:
    """ESR of the clusterings obtained by permuting user column ``column``.

    Every clustering is jointly optimised and simulated with the same seed, so
    losses relative to the identity are paired comparisons.
    """
    base = as_scenario(scenario)
    ident = tuple(range(1, base.N + 1))
    order = [ident] + [tuple(p) for p in perms if tuple(p) != ident]
    runs = {}
    for perm in order:
        sc = exchange_clustering(base, perm, column)
        power, bits = joint_optimize(sc, reduce_clusters=False)
        runs[perm] = simulate(power.scenario, power, bits, trials=trials, seed=seed,
                              quantizer=quantizer, threads=threads, return_samples=True)
    ref = runs[ident].samples
    out = {}
    for perm in order:
        r = runs[perm]
        d = ref - r.samples
        out[perm] = ClusteringOutcome(perm, r.esr, r.esr_se, float(d.mean()),
                                      float(d.std(ddof=1) / math.sqrt(d.size)))
    return out


def run_scheme(scenario, scheme: str, trials=None, seed=None, quantizer="rvq", threads=None):
    """Allocate and simulate one named scheme; returns (SimResult, power, bits).

    Schemes: joint, bits-only (equal power, optimised bits), equal-both,
    ref-bits (equal power, comparison bit allocator), alt-csi (joint
    allocation under the constant-angle model), oma.
    """
    sc = as_scenario(scenario)
    if scheme == "oma":
        return simulate_oma(sc, trials, seed, quantizer, threads), None, None
    if scheme in ("joint", "alt-csi"):
        power, bits = joint_optimize(sc)
    elif scheme == "bits-only":
        power = allocate_power(sc, "equal")
        bits = allocate_bits(sc, power, "proposed")
    elif scheme == "equal-both":
        power = allocate_power(sc, "equal")
        bits = allocate_bits(sc, power, "equal")
    elif scheme == "ref-bits":
        power = allocate_power(sc, "equal")
        bits = allocate_bits(sc, power, "reference")
    else:
        raise ConfigError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    csi = "alt" if scheme == "alt-csi" else "practical"
    res = simulate(power.scenario, power, bits, trials=trials, seed=seed, quantizer=quantizer,
                   csi_model=csi, threads=threads)
    return res, power, bits


SCHEMES = ("joint", "bits-only", "equal-both", "ref-bits", "alt-csi", "oma")
