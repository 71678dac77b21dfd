"""Rayleigh channels, random vector quantization of the channel direction and
zero-forcing beamformers.

Vectors are rows; the channel-beam product is the bilinear ``h @ w`` and the
quantization inner product is ``h @ c.conj()``.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalDegeneracyError

MAX_CODEBOOK_BITS = 30
STREAM_CHUNK = 1 << 16


def draw_channels(rng: np.random.Generator, M: int, N: int, K: int, size=None) -> np.ndarray:
    """i.i.d. CN(0, 1) channel vectors, shape (N, K, M) or (size, N, K, M)."""
    shape = (N, K, M) if size is None else (size, N, K, M)
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return (re + 1j * im) * math.sqrt(0.5)


def isotropic_unit(rng: np.random.Generator, shape, M: int) -> np.ndarray:
    shape = tuple(np.atleast_1d(shape)) if shape != () else ()
    z = rng.standard_normal(shape + (M,)) + 1j * rng.standard_normal(shape + (M,))
    return z / np.linalg.norm(z, axis=-1, keepdims=True)


def _orth_unit(x, g):
    """Unit vectors orthogonal (Hermitian) to unit rows ``x``, built from Gaussian ``g``."""
    u = g - np.sum(g * x.conj(), axis=-1, keepdims=True) * x
    u = u - np.sum(u * x.conj(), axis=-1, keepdims=True) * x
    return u / np.linalg.norm(u, axis=-1, keepdims=True)


@dataclass(frozen=True)
class QuantizedCDI:
    h_hat: np.ndarray
    cos2_theta: np.ndarray
    sin2_theta: np.ndarray
    e_tilde: np.ndarray

    @property
    def cos_theta(self):
        return np.sqrt(self.cos2_theta)

    @property
    def sin_theta(self):
        return np.sqrt(self.sin2_theta)


def rvq_sin2_exact(u: np.ndarray, bits, M: int) -> np.ndarray:
    """Inverse-CDF draw of sin^2(theta) for RVQ with 2^bits codewords.

    With 2^B i.i.d. isotropic codewords, sin^2 theta is the minimum of 2^B
    Beta(M-1, 1) variables: P[sin^2 <= x] = 1 - (1 - x^{M-1})^{2^B}.
    ``u`` must lie in (0, 1].
    """
    e = np.minimum(np.asarray(bits), 2000).astype(np.int32)
    t = -np.expm1(np.ldexp(np.log(u), -e))
    return t ** (1.0 / (M - 1))


def _from_sin2(h_tilde, s2, g):
    """Decomposition h~ = cos h^ + sin e~ given sin^2 and a Gaussian draw for the orthogonal part."""
    u = _orth_unit(h_tilde, g)
    c = np.sqrt(1.0 - s2)[..., None]
    s = np.sqrt(s2)[..., None]
    h_hat = c * h_tilde + s * u
    e_tilde = s * h_tilde - c * u
    return h_hat, e_tilde


def _codebook_one(h_tilde, bits, rng, codebook=None):
    M = h_tilde.shape[-1]
    if codebook is not None:
        cb = np.asarray(codebook, dtype=complex)
        ip = cb.conj() @ h_tilde
        i = int(np.argmax(np.abs(ip)))
        best, best_ip = cb[i], ip[i]
    else:
        n = 1 << bits
        best, best_ip, best_abs = None, 0j, -1.0
        for start in range(0, n, STREAM_CHUNK):
            m = min(STREAM_CHUNK, n - start)
            cb = isotropic_unit(rng, m, M)
            ip = cb.conj() @ h_tilde
            i = int(np.argmax(np.abs(ip)))
            if abs(ip[i]) > best_abs:
                best, best_ip, best_abs = cb[i], ip[i], abs(ip[i])
    ab = abs(best_ip)
    h_hat = best * (best_ip / ab) if ab > 0 else best  # phase-align so h~ h^^H is real
    c2 = min(1.0, ab * ab)
    s2 = max(0.0, 1.0 - c2)
    if s2 < 1e-24:
        e = _orth_unit(h_hat, rng.standard_normal(M) + 1j * rng.standard_normal(M))
        return h_hat, 1.0, 0.0, e
    e = (h_tilde - math.sqrt(c2) * h_hat) / math.sqrt(s2)
    e = e - (e @ h_hat.conj()) * h_hat
    e /= np.linalg.norm(e)
    return h_hat, c2, s2, e


def rvq_quantize(h: np.ndarray, bits, rng: np.random.Generator, method: str = "codebook",
                 codebook=None) -> QuantizedCDI:
    """Quantize channel directions of ``h`` (shape (..., M)) with ``bits`` each.

    Methods: ``codebook`` draws a fresh codebook of 2^bits isotropic unit
    vectors per vector and takes the max-|inner product| codeword (bits <= 30,
    streamed in chunks); ``rvq`` samples the exact RVQ angle by inverse CDF;
    ``cell`` samples the quantization-cell model sin^2 = delta * Beta(M-1, 1);
    ``perfect`` returns the true direction.
    """
    h = np.asarray(h, dtype=complex)
    M = h.shape[-1]
    lead = h.shape[:-1]
    bits = np.broadcast_to(np.asarray(bits), lead)
    if np.any(bits < 0) or np.any(bits != np.floor(bits)):
        raise ConfigError("bits must be nonnegative integers")
    nrm = np.linalg.norm(h, axis=-1, keepdims=True)
    if np.any(nrm == 0):
        raise NumericalDegeneracyError("zero channel vector has no direction")
    ht = h / nrm
    if method == "codebook":
        if np.any(bits > MAX_CODEBOOK_BITS):
            raise ConfigError(f"explicit codebooks are capped at {MAX_CODEBOOK_BITS} bits")
        hh = np.empty_like(ht)
        ee = np.empty_like(ht)
        c2 = np.empty(lead)
        s2 = np.empty(lead)
        for idx in np.ndindex(*lead):
            hh[idx], c2[idx], s2[idx], ee[idx] = _codebook_one(ht[idx], int(bits[idx]), rng, codebook)
        return QuantizedCDI(hh, c2, s2, ee)
    g = rng.standard_normal(ht.shape) + 1j * rng.standard_normal(ht.shape)
    if method == "perfect":
        s2 = np.zeros(lead)
    else:
        u = 1.0 - rng.random(lead)  # (0, 1]
        if method == "rvq":
            s2 = rvq_sin2_exact(u, bits, M)
        elif method == "cell":
            s2 = 2.0 ** (-bits / (M - 1.0)) * u ** (1.0 / (M - 1))
        else:
            raise ValueError(f"unknown quantizer {method!r}")
    hh, ee = _from_sin2(ht, s2, g)
    return QuantizedCDI(hh, 1.0 - s2, s2, ee)


def zf_beamformers(h_hat: np.ndarray, rng: np.random.Generator, M: int | None = None) -> np.ndarray:
    """Unit beamformers w_n with h_hat[m, k] @ w_n = 0 for every m != n.

    The null space of the stacked other-cluster directions comes from an SVD
    (singular values below 1e-10 * max count as zero); the direction inside it
    is uniform.
    """
    h_hat = np.asarray(h_hat, dtype=complex)
    N, K, Mh = h_hat.shape
    M = Mh if M is None else M
    if M != Mh:
        raise ConfigError("M does not match the CDI length")
    if M <= (N - 1) * K:
        raise ConfigError(f"zero-forcing needs M > (N-1)K, got M={M}, (N-1)K={(N - 1) * K}")
    w = np.empty((N, M), dtype=complex)
    for n in range(N):
        g = rng.standard_normal(M) + 1j * rng.standard_normal(M)
        if N == 1:
            w[n] = g / np.linalg.norm(g)
            continue
        Hbar = np.delete(h_hat, n, axis=0).reshape(-1, M)
        _, sv, Vh = np.linalg.svd(Hbar)
        r = Hbar.shape[0]
        if sv[-1] < 1e-10 * sv[0]:
            raise NumericalDegeneracyError(f"complementary matrix of cluster {n + 1} is rank deficient")
        V0 = Vh[r:].conj().T           # columns span {w : Hbar w = 0}
        x = V0 @ (V0.conj().T @ g)
        w[n] = x / np.linalg.norm(x)
    return w


@dataclass(frozen=True)
class ChannelRealization:
    h: np.ndarray
    h_hat: np.ndarray
    cos2_theta: np.ndarray
    sin2_theta: np.ndarray
    e_tilde: np.ndarray
    w: np.ndarray


def draw_realization(rng, M, N, K, bits, method="rvq") -> ChannelRealization:
    h = draw_channels(rng, M, N, K)
    q = rvq_quantize(h, bits, rng, method=method)
    w = zf_beamformers(q.h_hat, rng, M)
    return ChannelRealization(h, q.h_hat, q.cos2_theta, q.sin2_theta, q.e_tilde, w)


# ---------------------------------------------------------------------------
# binary trace files
#
# header (little-endian): 8-byte magic b"NOMALFTR", uint32 version, uint32 T,
# N, K, M; then complex64 arrays in C order:
#   h (T,N,K,M), h_hat (T,N,K,M), e_tilde (T,N,K,M), w (T,N,M),
#   theta (T,N,K) with real part cos^2 and imaginary part sin^2.

TRACE_MAGIC = b"NOMALFTR"
TRACE_VERSION = 1
_HDR = struct.Struct("<8sIIIII")


def write_trace(path, h, h_hat, e_tilde, w, cos2, sin2):
    h = np.asarray(h)
    T, N, K, M = h.shape
    with open(path, "wb") as fh:
        fh.write(_HDR.pack(TRACE_MAGIC, TRACE_VERSION, T, N, K, M))
        for arr in (h, h_hat, e_tilde, w, np.asarray(cos2) + 1j * np.asarray(sin2)):
            fh.write(np.ascontiguousarray(arr, dtype="<c8").tobytes())


def read_trace(path) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, ver, T, N, K, M = _HDR.unpack_from(raw, 0)
    if magic != TRACE_MAGIC or ver != TRACE_VERSION:
        raise ValueError(f"{path}: not a trace file (magic/version mismatch)")
    off = _HDR.size
    out = {"T": T, "N": N, "K": K, "M": M}
    for name, shape in (("h", (T, N, K, M)), ("h_hat", (T, N, K, M)), ("e_tilde", (T, N, K, M)),
                        ("w", (T, N, M)), ("theta", (T, N, K))):
        n = int(np.prod(shape))
        out[name] = np.frombuffer(raw, dtype="<c8", count=n, offset=off).reshape(shape)
        off += 8 * n
    if off != len(raw):
        raise ValueError(f"{path}: trailing bytes in trace file")
    out["cos2_theta"] = out["theta"].real.astype(float)
    out["sin2_theta"] = out["theta"].imag.astype(float)
    return out
