"""Scenario configuration, units and large-scale-fading user clustering."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError


def dbm_to_mw(x):
    return 10.0 ** (np.asarray(x, dtype=float) / 10.0) if np.ndim(x) else 10.0 ** (float(x) / 10.0)


def mw_to_dbm(x):
    return 10.0 * np.log10(x) if np.ndim(x) else 10.0 * math.log10(float(x))


def _as_matrix(name, value, N, K):
    a = np.array(value, dtype=float)
    if a.ndim == 0:
        a = np.full((N, K), float(a))
    if a.shape != (N, K):
        raise ConfigError(f"{name} must be an N x K = {N} x {K} matrix, got shape {a.shape}", field=name)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SystemConfig:
    """Downlink scenario. Powers and noise in mW, distances in meters."""

    M: int
    N: int
    K: int
    B: int
    P: float
    alpha: float
    distances: np.ndarray
    noise_vars: np.ndarray
    mc_trials: int = 200_000
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("M", "N", "K", "B", "mc_trials", "rng_seed"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v:
                raise ConfigError(f"{name} must be an integer, got {v!r}", field=name)
            object.__setattr__(self, name, int(v))
        if self.N < 1:
            raise ConfigError("N must be >= 1", field="N")
        if self.K < 2:
            raise ConfigError("K must be >= 2 (NOMA needs at least two users per cluster)", field="K")
        if self.B < 0:
            raise ConfigError("B must be >= 0", field="B")
        if self.M <= (self.N - 1) * self.K:
            raise ConfigError(
                f"zero-forcing needs M > (N-1)K, got M={self.M}, (N-1)K={(self.N - 1) * self.K}", field="M")
        if not (self.P > 0 and math.isfinite(self.P)):
            raise ConfigError("P must be a positive finite power in mW", field="P")
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ConfigError("alpha must be positive", field="alpha")
        d = _as_matrix("distances", self.distances, self.N, self.K)
        s = _as_matrix("noise_vars", self.noise_vars, self.N, self.K)
        if np.any(~(d > 0)) or np.any(~np.isfinite(d)):
            raise ConfigError("all distances must be positive", field="distances")
        if np.any(~(s > 0)) or np.any(~np.isfinite(s)):
            raise ConfigError("all noise variances must be positive", field="noise_vars")
        object.__setattr__(self, "P", float(self.P))
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "distances", d)
        object.__setattr__(self, "noise_vars", s)

    @property
    def P_dbm(self) -> float:
        return mw_to_dbm(self.P)

    @property
    def cnr(self) -> np.ndarray:
        """Large-scale gain over noise, d^{-alpha} / sigma^2, in 1/mW."""
        return self.distances ** (-self.alpha) / self.noise_vars

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)

    def with_power_dbm(self, p_dbm: float) -> "SystemConfig":
        return self.replace(P=dbm_to_mw(p_dbm))

    def raw_users(self) -> list:
        """Users as (distance, noise) pairs, column-major (all k=1 users first)."""
        return [(float(self.distances[n, k]), float(self.noise_vars[n, k]))
                for k in range(self.K) for n in range(self.N)]

    def to_dict(self) -> dict:
        return {
            "M": self.M, "N": self.N, "K": self.K, "B": self.B,
            "P": float(self.P).hex(), "alpha": float(self.alpha).hex(),
            "distances": [[float(x).hex() for x in row] for row in self.distances],
            "noise_vars": [[float(x).hex() for x in row] for row in self.noise_vars],
            "mc_trials": self.mc_trials, "rng_seed": self.rng_seed,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class ClusteredScenario:
    """A config whose (n, k) layout is the cluster assignment.

    ``user_ids[n, k]`` indexes the raw user list the clustering started from.
    Exchanged scenarios skip the ordering checks on purpose.
    """

    config: SystemConfig
    cnr: np.ndarray
    user_ids: np.ndarray
    exchanged: bool = False

    def __post_init__(self):
        c = self.config
        cnr = np.array(self.cnr, dtype=float)
        ids = np.array(self.user_ids, dtype=np.int64)
        if cnr.shape != (c.N, c.K) or ids.shape != (c.N, c.K):
            raise ConfigError("cnr / user_ids shape does not match the config")
        cnr.setflags(write=False)
        ids.setflags(write=False)
        object.__setattr__(self, "cnr", cnr)
        object.__setattr__(self, "user_ids", ids)
        if not self.exchanged and not ordering_holds(cnr):
            raise ConfigError("cnr matrix violates the clustering orderings")

    @property
    def N(self):
        return self.config.N

    @property
    def K(self):
        return self.config.K

    @property
    def M(self):
        return self.config.M

    def with_config(self, **changes) -> "ClusteredScenario":
        """Same clustering with scalar config fields changed (P, B, ...)."""
        for key in ("N", "K", "distances", "noise_vars", "alpha"):
            if key in changes:
                raise ConfigError(f"cannot change {key} of a clustered scenario; recluster instead")
        return dataclasses.replace(self, config=self.config.replace(**changes))

    def with_power_dbm(self, p_dbm: float) -> "ClusteredScenario":
        return self.with_config(P=dbm_to_mw(p_dbm))

    def digest(self) -> str:
        blob = self.config.digest() + ",".join(map(str, self.user_ids.ravel()))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def ordering_holds(cnr) -> bool:
    """Both clustering orderings: columns nonincreasing down, rows nonincreasing right."""
    cnr = np.asarray(cnr)
    return bool(np.all(np.diff(cnr, axis=0) <= 0) and np.all(np.diff(cnr, axis=1) <= 0))


def _arrange(gains: np.ndarray, N: int, K: int) -> np.ndarray:
    # strongest first, ties by index; column-major fill puts the N strongest in
    # column 1, the next N in column 2, and so on
    order = np.lexsort((np.arange(gains.size), -gains))
    return order.reshape(K, N).T


def cluster_users(raw_users: Sequence, N: int, K: int, config: SystemConfig,
                  ids: Iterable[int] | None = None) -> ClusteredScenario:
    """Assign ``N*K`` users of ``(distance, noise_mw)`` to clusters.

    ``config`` supplies M, B, P and alpha; its N/K/distance fields are replaced.
    ``ids`` relabels the users (defaults to their position in ``raw_users``).
    """
    raw = np.asarray(raw_users, dtype=float)
    if raw.ndim != 2 or raw.shape[1] != 2:
        raise ConfigError("raw_users must be a list of (distance, noise) pairs")
    if raw.shape[0] != N * K:
        raise ConfigError(f"expected N*K = {N * K} users, got {raw.shape[0]}")
    ids = np.arange(N * K) if ids is None else np.asarray(list(ids), dtype=np.int64)
    if np.any(~(raw > 0)):
        raise ConfigError("distances and noise variances must be positive")
    gains = raw[:, 0] ** (-config.alpha) / raw[:, 1]
    idx = _arrange(gains, N, K)
    cfg = config.replace(N=N, K=K, distances=raw[idx, 0], noise_vars=raw[idx, 1])
    return ClusteredScenario(cfg, cfg.cnr, ids[idx])


def cluster_config(config: SystemConfig) -> ClusteredScenario:
    """Cluster the users listed in ``config`` (its layout is taken as unordered)."""
    return cluster_users(config.raw_users(), config.N, config.K, config)


def recluster(scenario: ClusteredScenario, N: int, K: int, keep: int | None = None) -> ClusteredScenario:
    """Re-cluster the users of ``scenario`` into ``N`` clusters of ``K``.

    When ``N*K`` is smaller than the current user count the strongest users are kept.
    """
    c = scenario.config
    raw = np.array(c.raw_users())
    ids = np.array([scenario.user_ids[n, k] for k in range(c.K) for n in range(c.N)])
    if N * K < raw.shape[0]:
        gains = raw[:, 0] ** (-c.alpha) / raw[:, 1]
        order = np.lexsort((ids, -gains))[: N * K]
        order.sort()
        raw, ids = raw[order], ids[order]
    return cluster_users(raw, N, K, c, ids)


def exchange_clustering(base: ClusteredScenario, perm: Sequence[int], k: int) -> ClusteredScenario:
    """Permute the users of column ``k`` (1-based, k >= 2) across clusters.

    ``perm`` is 1-based: new cluster n receives the column-k user of old cluster perm[n].
    """
    N, K = base.N, base.K
    if k < 2 or k > K:
        raise ConfigError("only user columns 2..K can be exchanged; the strongest users stay fixed")
    p = np.asarray(perm, dtype=np.int64) - 1
    if sorted(p.tolist()) != list(range(N)):
        raise ConfigError(f"perm must be a permutation of 1..{N}")
    if np.all(p == np.arange(N)):
        return base
    col = k - 1
    d = np.array(base.config.distances)
    s = np.array(base.config.noise_vars)
    ids = np.array(base.user_ids)
    cnr = np.array(base.cnr)
    for arr in (d, s, ids, cnr):
        arr[:, col] = arr[p, col]
    cfg = base.config.replace(distances=d, noise_vars=s)
    return ClusteredScenario(cfg, cnr, ids, exchanged=True)


# ---------------------------------------------------------------------------
# config files

_SCHEMA = {
    "system": {"M": int, "N": int, "K": int, "B": int, "P_dbm": float, "P_mw": float, "alpha": float},
    "users": {"distances": list, "noise_dbm": (float, list), "noise_mw": (float, list)},
    "simulation": {"trials": int, "seed": int, "quantizer": str, "threads": int},
}
QUANTIZERS = ("rvq", "codebook", "cell", "perfect")


def _locate(text: str) -> dict:
    """Map (table, key) -> 1-based line number of its assignment."""
    where = {}
    table = ""
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"^\[([A-Za-z0-9_.\-]+)\]\s*(#.*)?$", s)
        if m:
            table = m.group(1)
            where[(table, None)] = i
            continue
        m = re.match(r"^([A-Za-z0-9_\-]+)\s*=", s)
        if m:
            where[(table, m.group(1))] = i
    return where


def _typecheck(value, kind):
    kinds = kind if isinstance(kind, tuple) else (kind,)
    for t in kinds:
        if t is float and isinstance(value, (int, float)) and not isinstance(value, bool):
            return True
        if t is int and isinstance(value, int) and not isinstance(value, bool):
            return True
        if t in (str, list) and isinstance(value, t):
            return True
    return False


def parse_config(text: str, source: str = "<config>") -> tuple[SystemConfig, dict]:
    """Parse TOML text into a SystemConfig plus simulation options.

    Every validation error carries the line of the offending key.
    """
    try:
        import tomllib  # type: ignore[import-not-found]
    except ModuleNotFoundError:
        import tomli as tomllib
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"TOML syntax error: {exc}", int(m.group(1)) if m else None, source) from None
    where = _locate(text)

    def line(table, key=None):
        return where.get((table, key), where.get((table, None)))

    for table, body in doc.items():
        if table not in _SCHEMA:
            raise ConfigError(f"unknown table [{table}]", line(table), source)
        if not isinstance(body, dict):
            raise ConfigError(f"{table} must be a table", line("", table), source)
        for key, value in body.items():
            if key not in _SCHEMA[table]:
                raise ConfigError(f"unknown key {table}.{key}", line(table, key), source)
            if not _typecheck(value, _SCHEMA[table][key]):
                raise ConfigError(f"{table}.{key} has the wrong type ({type(value).__name__})",
                                  line(table, key), source)
    sysd = doc.get("system", {})
    users = doc.get("users", {})
    sim = doc.get("simulation", {})
    for key in ("M", "N", "K", "B", "alpha"):
        if key not in sysd:
            raise ConfigError(f"missing system.{key}", line("system"), source)
    if ("P_dbm" in sysd) == ("P_mw" in sysd):
        raise ConfigError("give exactly one of system.P_dbm / system.P_mw", line("system"), source)
    if "distances" not in users:
        raise ConfigError("missing users.distances", line("users"), source)
    if ("noise_dbm" in users) == ("noise_mw" in users):
        raise ConfigError("give exactly one of users.noise_dbm / users.noise_mw", line("users"), source)
    P = dbm_to_mw(sysd["P_dbm"]) if "P_dbm" in sysd else sysd["P_mw"]
    noise_key = "noise_dbm" if "noise_dbm" in users else "noise_mw"
    try:
        noise = np.array(users[noise_key], dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"users.{noise_key} must be numeric", line("users", noise_key), source) from None
    if noise_key == "noise_dbm":
        noise = dbm_to_mw(noise)
    try:
        dist = np.array(users["distances"], dtype=float)
    except (TypeError, ValueError):
        raise ConfigError("users.distances must be an N x K numeric matrix",
                          line("users", "distances"), source) from None
    keymap = {"distances": ("users", "distances"), "noise_vars": ("users", noise_key),
              "P": ("system", "P_dbm" if "P_dbm" in sysd else "P_mw")}
    try:
        cfg = SystemConfig(
            M=sysd["M"], N=sysd["N"], K=sysd["K"], B=sysd["B"], P=P, alpha=sysd["alpha"],
            distances=dist, noise_vars=noise,
            mc_trials=sim.get("trials", 200_000), rng_seed=sim.get("seed", 0))
    except ConfigError as exc:
        tab, key = keymap.get(exc.field, ("system", exc.field))
        raise ConfigError(exc.bare_message, line(tab, key), source, exc.field) from None
    q = sim.get("quantizer", "rvq")
    if q not in QUANTIZERS:
        raise ConfigError(f"simulation.quantizer must be one of {QUANTIZERS}", line("simulation", "quantizer"),
                          source)
    if sim.get("trials", 200_000) < 100:
        raise ConfigError("simulation.trials must be >= 100", line("simulation", "trials"), source)
    opts = {"quantizer": q}
    if "threads" in sim:
        opts["threads"] = sim["threads"]
    return cfg, opts


def load_config(path) -> tuple[SystemConfig, dict]:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return parse_config(text, str(path))


# reference scenarios
D1 = ((25.0, 35.0), (27.0, 37.0), (29.0, 39.0))
D2 = ((10.0, 35.0), (12.0, 37.0), (14.0, 39.0))


def reference_config(distances=D1, B: int = 42, P_dbm: float = 30.0, M: int = 6,
                 noise_dbm: float = -50.0, alpha: float = 4.0, **kw) -> SystemConfig:
    d = np.asarray(distances, dtype=float)
    return SystemConfig(M=M, N=d.shape[0], K=d.shape[1], B=B, P=dbm_to_mw(P_dbm), alpha=alpha,
                        distances=d, noise_vars=dbm_to_mw(noise_dbm), **kw)
