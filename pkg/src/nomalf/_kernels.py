"""Hot loop of the simulator: ZF beamformers and post-SIC rates per trial.

Both twins take the same random inputs and build the same beamformer
``w_n = P_n g_n / |P_n g_n|`` with ``P_n`` the projector onto the null space of
the other clusters' quantized directions, so results agree to rounding.
"""
import math

import numpy as np

from ._jit import JIT_ENABLED, njit

RANK_TOL = 1e-10


@njit(cache=True, nogil=True)
def _zf_rates_nb(h, hhat, g, powers, cnr):
    T, N, K, M = h.shape
    R = (N - 1) * K
    rates = np.empty((T, N, K))
    Q = np.empty((max(R, 1), M), dtype=np.complex128)
    w = np.empty((N, M), dtype=np.complex128)
    x = np.empty(M, dtype=np.complex128)
    gains = np.empty(N)
    ptot = np.zeros(N)
    for n in range(N):
        for k in range(K):
            ptot[n] += powers[n, k]
    bad = 0
    for t in range(T):
        for n in range(N):
            r = 0
            for m in range(N):
                if m == n:
                    continue
                for k in range(K):
                    nrm0 = 0.0
                    for j in range(M):
                        x[j] = np.conj(hhat[t, m, k, j])
                        nrm0 += x[j].real ** 2 + x[j].imag ** 2
                    for _ in range(2):
                        for i in range(r):
                            c = 0j
                            for j in range(M):
                                c += np.conj(Q[i, j]) * x[j]
                            for j in range(M):
                                x[j] -= c * Q[i, j]
                    nv = 0.0
                    for j in range(M):
                        nv += x[j].real ** 2 + x[j].imag ** 2
                    nv = math.sqrt(nv)
                    if nv <= RANK_TOL * math.sqrt(nrm0):
                        bad += 1
                        nv = 1.0
                    for j in range(M):
                        Q[r, j] = x[j] / nv
                    r += 1
            for j in range(M):
                x[j] = g[t, n, j]
            for _ in range(2):
                for i in range(r):
                    c = 0j
                    for j in range(M):
                        c += np.conj(Q[i, j]) * x[j]
                    for j in range(M):
                        x[j] -= c * Q[i, j]
            nv = 0.0
            for j in range(M):
                nv += x[j].real ** 2 + x[j].imag ** 2
            nv = math.sqrt(nv)
            if nv == 0.0:
                bad += 1
                nv = 1.0
            for j in range(M):
                w[n, j] = x[j] / nv
        for n in range(N):
            for k in range(K):
                for i in range(N):
                    c = 0j
                    for j in range(M):
                        c += h[t, n, k, j] * w[i, j]
                    gains[i] = c.real ** 2 + c.imag ** 2
                own = gains[n]
                intra = 0.0
                for j in range(k):
                    intra += powers[n, j]
                inter = 0.0
                for i in range(N):
                    if i != n:
                        inter += gains[i] * ptot[i]
                a = cnr[n, k]
                sinr = a * own * powers[n, k] / (a * (own * intra + inter) + 1.0)
                rates[t, n, k] = math.log2(1.0 + sinr)
    return rates, bad


def _zf_beams_np(hhat, g):
    T, N, K, M = hhat.shape
    w = np.empty((T, N, M), dtype=complex)
    bad = 0
    for n in range(N):
        x = g[:, n].copy()
        if N > 1:
            A = np.delete(hhat, n, axis=1).reshape(T, (N - 1) * K, M).conj().transpose(0, 2, 1)
            Q, Rm = np.linalg.qr(A)
            d = np.abs(np.diagonal(Rm, axis1=1, axis2=2))
            bad += int(np.sum(d.min(axis=1) <= RANK_TOL * np.linalg.norm(A, axis=1).max(axis=1)))
            for _ in range(2):
                x = x - np.einsum("tmr,tr->tm", Q, np.einsum("tmr,tm->tr", Q.conj(), x))
        nv = np.linalg.norm(x, axis=1, keepdims=True)
        bad += int(np.sum(nv == 0))
        w[:, n] = x / np.where(nv == 0, 1.0, nv)
    return w, bad


def _zf_rates_np(h, hhat, g, powers, cnr):
    T, N, K, M = h.shape
    w, bad = _zf_beams_np(hhat, g)
    gains = np.abs(np.einsum("tnkm,tim->tnki", h, w)) ** 2          # (T, N, K, N)
    own = np.einsum("tnkn->tnk", gains)
    ptot = powers.sum(axis=1)
    inter = gains @ ptot - own * ptot[None, :, None]
    intra = np.concatenate([np.zeros((N, 1)), np.cumsum(powers, axis=1)[:, :-1]], axis=1)
    sinr = cnr * own * powers / (cnr * (own * intra + inter) + 1.0)
    return np.log2(1.0 + sinr), bad


def zf_rates(h, hhat, g, powers, cnr, backend=None):
    """Per-trial rates (T, N, K) and a count of rank-degenerate null spaces.

    h, hhat: (T, N, K, M) effective channels and quantized directions;
    g: (T, N, M) Gaussian draws steering each beam inside its null space;
    powers: (N, K) mW; cnr: (N, K) 1/mW.
    """
    use_nb = JIT_ENABLED if backend is None else backend == "numba"
    args = (np.ascontiguousarray(h, dtype=np.complex128), np.ascontiguousarray(hhat, dtype=np.complex128),
            np.ascontiguousarray(g, dtype=np.complex128), np.ascontiguousarray(powers, dtype=float),
            np.ascontiguousarray(cnr, dtype=float))
    if use_nb:
        return _zf_rates_nb(*args)
    return _zf_rates_np(*args)


def zf_beams(hhat, g):
    """Batched beamformers (T, N, M) from the numpy path (used for traces and tests)."""
    return _zf_beams_np(np.asarray(hhat, dtype=complex), np.asarray(g, dtype=complex))[0]
