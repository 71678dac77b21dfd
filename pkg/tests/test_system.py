import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nomalf.errors import ConfigError
from nomalf.system import (D1, SystemConfig, cluster_config, cluster_users, dbm_to_mw, exchange_clustering,
                           mw_to_dbm, ordering_holds, parse_config, recluster, reference_config)

GOOD = """\
[system]
M = 6
N = 3
K = 2
B = 42
P_dbm = 30.0
alpha = 4.0

[users]
distances = [[25.0, 35.0], [27.0, 37.0], [29.0, 39.0]]
noise_dbm = -50.0

[simulation]
trials = 5000
seed = 3
quantizer = "cell"
"""


@given(st.floats(-200, 200))
def test_unit_round_trip(x):
    assert mw_to_dbm(dbm_to_mw(x)) == pytest.approx(x, rel=1e-12, abs=1e-12)


def test_units():
    assert dbm_to_mw(30.0) == pytest.approx(1000.0)
    assert dbm_to_mw(-50.0) == pytest.approx(1e-5)


def test_d1_clustering():
    sc = cluster_config(reference_config(D1))
    assert np.allclose(sc.config.distances, [[25, 35], [27, 37], [29, 39]])
    assert ordering_holds(sc.cnr)
    # user ids index the column-major raw list (25, 27, 29, 35, 37, 39)
    assert sc.user_ids.tolist() == [[0, 3], [1, 4], [2, 5]]


def test_ties_resolved_by_index():
    cfg = reference_config(np.full((3, 2), 30.0))
    sc = cluster_config(cfg)
    assert sorted(sc.user_ids.ravel().tolist()) == list(range(6))
    assert sc.user_ids.tolist() == [[0, 3], [1, 4], [2, 5]]


def brute_force_valid(gains, N, K):
    """Every assignment satisfying both orderings has the same sorted columns."""
    found = []
    for perm in itertools.permutations(range(N * K)):
        g = gains[list(perm)].reshape(N, K)
        if ordering_holds(g):
            found.append(g)
    return found


@given(st.lists(st.floats(5, 80), min_size=6, max_size=6, unique=True))
@settings(max_examples=30, deadline=None)
def test_clustering_matches_brute_force(dist):
    cfg = reference_config(np.reshape(dist, (3, 2)))
    sc = cluster_config(cfg)
    raw = np.array(cfg.raw_users())
    gains = raw[:, 0] ** -4.0 / raw[:, 1]
    valid = brute_force_valid(gains, 3, 2)
    assert len(valid) >= 1
    assert any(np.allclose(sc.cnr, v) for v in valid)


@given(st.lists(st.floats(5, 80), min_size=8, max_size=8))
@settings(max_examples=50, deadline=None)
def test_clustering_idempotent(dist):
    cfg = reference_config(np.reshape(dist, (2, 4)), M=6)
    sc = cluster_config(cfg)
    again = cluster_config(sc.config)
    assert np.array_equal(again.cnr, sc.cnr)
    assert ordering_holds(sc.cnr)


def test_cluster_users_size_mismatch():
    cfg = reference_config(D1)
    with pytest.raises(ConfigError):
        cluster_users([(10, 1e-5)] * 5, 3, 2, cfg)


def test_recluster_keeps_strongest():
    sc = cluster_config(reference_config(D1))
    sub = recluster(sc, 2, 2)
    assert sorted(sub.config.distances.ravel().tolist()) == [25, 27, 29, 35]
    two = recluster(sc, 2, 3)
    assert two.config.distances.tolist() == [[25, 29, 37], [27, 35, 39]]


def test_exchange_clustering():
    sc = cluster_config(reference_config(D1))
    ex = exchange_clustering(sc, [2, 3, 1], 2)
    assert ex.config.distances[:, 1].tolist() == [37, 39, 35]
    assert ex.config.distances[:, 0].tolist() == [25, 27, 29]
    assert exchange_clustering(sc, [1, 2, 3], 2) is sc
    with pytest.raises(ConfigError):
        exchange_clustering(sc, [1, 2, 3], 1)
    with pytest.raises(ConfigError):
        exchange_clustering(sc, [1, 1, 3], 2)


@pytest.mark.parametrize("kw,field", [
    (dict(M=4), "M"), (dict(K=1), "K"), (dict(N=0), "N"), (dict(B=-1), "B"), (dict(P=0.0), "P"),
    (dict(alpha=0.0), "alpha"),
])
def test_config_validation(kw, field):
    base = dict(M=6, N=3, K=2, B=42, P=1000.0, alpha=4.0, distances=np.array(D1), noise_vars=1e-5)
    base.update(kw)
    if field in ("K", "N"):
        base["distances"] = np.ones((max(base["N"], 1), max(base["K"], 1)))
    with pytest.raises(ConfigError) as ei:
        SystemConfig(**base)
    assert ei.value.field == field


def test_zf_feasibility_boundary():
    with pytest.raises(ConfigError):
        reference_config(D1, M=4)      # M = (N-1)K exactly
    reference_config(D1, M=5)


def test_negative_distance_rejected():
    with pytest.raises(ConfigError):
        reference_config(-np.array(D1))


def test_parse_config():
    cfg, opts = parse_config(GOOD)
    assert cfg.M == 6 and cfg.B == 42 and cfg.mc_trials == 5000 and cfg.rng_seed == 3
    assert cfg.P == pytest.approx(1000.0)
    assert np.allclose(cfg.noise_vars, 1e-5)
    assert opts["quantizer"] == "cell"
    assert cfg.digest() == parse_config(GOOD)[0].digest()


@pytest.mark.parametrize("old,new,line", [
    ("alpha = 4.0", 'alpha = "four"', 7),
    ("M = 6", "M = 4", 2),
    ("B = 42", "B = 42\nfoo = 1", 6),
    ("noise_dbm = -50.0", 'noise_dbm = "x"', 11),
    ('quantizer = "cell"', 'quantizer = "lattice"', 16),
    ("trials = 5000", "trials = 10", 14),
    ("distances = [[25.0, 35.0], [27.0, 37.0], [29.0, 39.0]]", "distances = [[25.0, 35.0]]", 10),
    ("[simulation]", "[simulation\n", 13),
])
def test_config_errors_carry_line(old, new, line):
    with pytest.raises(ConfigError) as ei:
        parse_config(GOOD.replace(old, new), "x.toml")
    assert ei.value.line == line
    assert f"x.toml:{line}" in str(ei.value)


def test_config_missing_key():
    with pytest.raises(ConfigError, match="system.B"):
        parse_config(GOOD.replace("B = 42\n", ""))
    with pytest.raises(ConfigError, match="exactly one"):
        parse_config(GOOD.replace("P_dbm = 30.0", "P_dbm = 30.0\nP_mw = 1.0"))
