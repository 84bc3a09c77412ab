import numpy as np
import pytest

from stc_dropout.graph import Graph


def random_digraph(rng, n, p=0.3, weighted=True):
    a = (rng.random((n, n)) < p).astype(float)
    if weighted:
        a *= rng.uniform(0.1, 1.0, (n, n))
    np.fill_diagonal(a, 0.0)
    return Graph(a)


def reach_oracle(adjacency, k):
    """Support of A + A^2 + ... + A^k over booleans, diagonal removed."""
    a = (np.asarray(adjacency) > 0).astype(np.int64)
    n = len(a)
    reach = np.zeros((n, n), dtype=bool)
    power = np.eye(n, dtype=np.int64)
    for _ in range(k):
        power = ((power @ a) > 0).astype(np.int64)
        reach |= power.astype(bool)
    np.fill_diagonal(reach, False)
    return [frozenset(np.flatnonzero(reach[i]).tolist()) for i in range(n)]


# "[PASS]/[FAIL] criterion N: ..." lines, echoed after the run
ACCEPTANCE_REPORT = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_REPORT:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_REPORT):
            terminalreporter.write_line(ACCEPTANCE_REPORT[n])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
