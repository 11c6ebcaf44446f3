import numpy as np
import pytest
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from cagra import metrics


def scipy_scc(ids):
    n, d = ids.shape
    rows = np.repeat(np.arange(n), d)
    adj = csr_matrix((np.ones(n * d), (rows, ids.ravel())), shape=(n, n))
    return connected_components(adj, directed=True, connection="strong")[0]


def brute_two_hop(ids):
    out = []
    for v in range(ids.shape[0]):
        seen = set(ids[v].tolist())
        for u in ids[v]:
            seen.update(ids[u].tolist())
        seen.discard(v)
        out.append(len(seen))
    return np.array(out)


def test_strong_cc_examples():
    cycle = np.roll(np.arange(6), -1)[:, None]
    assert metrics.strong_cc_count(cycle) == 1
    chain = np.array([[1], [2], [-1]])
    assert metrics.strong_cc_count(chain) == 3
    assert metrics.strong_cc_count(np.array([[1], [0], [3], [2]])) == 2


def test_two_hop_examples():
    complete = np.array([[1, 2], [0, 2], [0, 1]])
    assert metrics.avg_2hop_count(complete) == 2.0
    assert metrics.avg_2hop_count(np.array([[1], [0]])) == 1.0


def test_two_hop_tree_reaches_maximum():
    # Node 0 expands into 32 children, each with 32 distinct grandchildren.
    d = 32
    n = 1 + d + d * d
    ids = np.zeros((n, d), dtype=np.int64)
    ids[0] = np.arange(1, d + 1)
    for c in range(d):
        ids[1 + c] = 1 + d + c * d + np.arange(d)
    counts = metrics.two_hop_counts(ids)
    assert counts[0] == d + d * d == 1056
    assert metrics.quality_report(ids).max_2hop == 1056


@pytest.mark.parametrize("seed", range(5))
def test_against_scipy_and_brute_force(seed):
    rng = np.random.default_rng(seed)
    n, d = 300, 2
    ids = rng.integers(0, n, size=(n, d))
    assert metrics.strong_cc_count(ids) == scipy_scc(ids)
    assert (metrics.two_hop_counts(ids) == brute_two_hop(ids)).all()


def test_strong_cc_relabeling_invariant():
    rng = np.random.default_rng(7)
    n = 500
    ids = rng.integers(0, n, size=(n, 2))
    perm = rng.permutation(n)
    inv = np.argsort(perm)
    relabeled = perm[ids[inv]]
    assert metrics.strong_cc_count(relabeled) == metrics.strong_cc_count(ids)


def test_deep_chain_does_not_recurse():
    n = 200_000
    chain = np.append(np.arange(1, n), -1)[:, None]
    assert metrics.strong_cc_count(chain) == n
    cycle = np.roll(np.arange(n), -1)[:, None]
    assert metrics.strong_cc_count(cycle) == 1


def test_report_lines():
    report = metrics.quality_report(np.array([[1], [0]]))
    assert report.strong_cc == 1 and report.avg_2hop == 1.0
    assert report.to_lines().splitlines() == ["N=2", "degree=1", "strong_cc=1", "avg_2hop=1", "max_2hop=2"]
    assert 0 < report.avg_2hop <= report.max_2hop
