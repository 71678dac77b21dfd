import numpy as np
import pytest

from nomalf.system import D1, D2, cluster_config, reference_config

_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line for an acceptance criterion."""
    def _report(num, ok, detail):
        line = f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.stash.setdefault(_ACCEPTANCE, []).append((num, line))
        print(line)
        return ok
    return _report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rows = config.stash.get(_ACCEPTANCE, [])
    if rows:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(rows):
            terminalreporter.write_line(line)


@pytest.fixture
def d1():
    return cluster_config(reference_config(D1, B=42, P_dbm=30.0))


@pytest.fixture
def d2():
    return cluster_config(reference_config(D2, B=42, P_dbm=30.0))


def random_scenario(rng, N=None, K=None, M=None, B=None, P_dbm=None):
    """A feasible random scenario with distances 10..60 m."""
    N = N or int(rng.integers(2, 4))
    K = K or int(rng.integers(2, 4))
    M = M or (N - 1) * K + int(rng.integers(1, 4))
    B = int(rng.integers(N * K, 12 * N * K)) if B is None else B
    P_dbm = float(rng.uniform(25, 45)) if P_dbm is None else P_dbm
    d = rng.uniform(10, 60, size=(N, K))
    return cluster_config(reference_config(d, B=B, P_dbm=P_dbm, M=M))
