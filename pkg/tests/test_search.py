import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cagra import SearchBuffer, SearchParams, UsageError, VisitedTable, distance, exact_knn_graph, exact_topk, optimize, recall, search_one
from cagra.core import INDEX_MASK, PARENT_FLAG
from cagra.search import (
    DUMMY_ID,
    expand_candidates,
    init_random_sample,
    reset_table,
    select_parent_ids,
    update_topm_buffer,
)

from conftest import uniform

F = PARENT_FLAG


def topm_oracle(ids, dists, M):
    """Full sort of the whole buffer by (dist, id), dedup by id keeping the flag."""
    entries = {}
    for v, dv in zip(ids.tolist(), dists.tolist()):
        if dv == np.inf:
            continue
        key = v & INDEX_MASK
        flag = v & F
        if key in entries:
            entries[key] = (dv, entries[key][1] | flag)
        else:
            entries[key] = (dv, flag)
    order = sorted(entries.items(), key=lambda kv: (kv[1][0], kv[0]))[:M]
    out_i = np.full(M, DUMMY_ID, dtype=np.uint32)
    out_d = np.full(M, np.inf, dtype=np.float32)
    for i, (key, (dv, flag)) in enumerate(order):
        out_i[i] = key | flag
        out_d[i] = dv
    return out_i, out_d


def random_buffer(rng, M, n_cand, n_ids):
    # One distance per id so duplicates agree, as they do in a real search.
    dist_of = rng.integers(0, 50, size=n_ids).astype(np.float32) / 8
    n_top = int(rng.integers(0, M + 1))
    top = rng.choice(n_ids, size=min(n_top, n_ids), replace=False)
    top = sorted(top.tolist(), key=lambda v: (dist_of[v], v))
    top_entries = [(v | (F if rng.random() < 0.4 else 0), dist_of[v]) for v in top]
    top_entries += [(int(DUMMY_ID), np.inf)] * (M - len(top_entries))
    cand = []
    for _ in range(n_cand):
        if rng.random() < 0.2:
            cand.append((int(DUMMY_ID), np.inf))
        else:
            v = int(rng.integers(0, n_ids))
            cand.append((v | (F if rng.random() < 0.2 else 0), dist_of[v]))
    return SearchBuffer.from_lists(top_entries, cand, M)


def test_init_examples():
    x = uniform(4, 3)
    params = SearchParams(k=1, M=2, p=1)
    buf, table, evals = init_random_sample(x, x[0] + 0.5, params, degree=4)
    cand = buf.candidate_ids
    assert len(cand) == 4 and cand.min() >= 0 and cand.max() < 4
    for v, dv in zip(cand, buf.candidate_dists):
        if dv != np.inf:
            assert dv == distance(x[v], x[0] + 0.5)
    assert evals == len(set(cand.tolist())) == len(table)
    assert (buf.topm_dists == np.inf).all()
    again, _, _ = init_random_sample(x, x[0] + 0.5, params, degree=4)
    assert (again.ids == buf.ids).all() and (again.dists == buf.dists).all()


def test_update_topm_examples():
    buf = SearchBuffer.from_lists([(5, 0.1), (7, 0.3)], [(2, 0.2), (9, 0.5)])
    update_topm_buffer(buf)
    assert buf.topm_ids.tolist() == [5, 2]
    assert buf.topm_dists.tolist() == pytest.approx([0.1, 0.2])

    buf = SearchBuffer.from_lists([(5, 0.1), (7, 0.3)], [(int(DUMMY_ID), np.inf)] * 2)
    before = buf.ids[:2].copy(), buf.dists[:2].copy()
    update_topm_buffer(buf)
    assert (buf.ids[:2] == before[0]).all() and (buf.dists[:2] == before[1]).all()

    buf = SearchBuffer.from_lists([(5 | F, 0.1), (7, 0.3)], [(7, 0.3), (5, 0.1), (8, 0.4)], M=3)
    update_topm_buffer(buf)
    assert buf.topm() == [(5, pytest.approx(0.1), True), (7, pytest.approx(0.3), False), (8, pytest.approx(0.4), False)]
    buf = SearchBuffer.from_lists([(5, 0.1)], [(5 | F, 0.1)], M=1)
    update_topm_buffer(buf)
    assert buf.topm_flags.tolist() == [True]


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 24), st.integers(0, 40), st.integers(1, 60))
def test_update_topm_matches_full_sort(seed, M, n_cand, n_ids):
    buf = random_buffer(np.random.default_rng(seed), M, n_cand, n_ids)
    want_i, want_d = topm_oracle(buf.ids, buf.dists, M)
    update_topm_buffer(buf)
    assert (buf.ids[:M] == want_i).all()
    assert (buf.dists[:M].view(np.uint32) == want_d.view(np.uint32)).all()


def test_select_parents_examples():
    buf = SearchBuffer.from_lists([(5, 0.1), (2, 0.2), (9, 0.3)], [])
    assert select_parent_ids(buf, 1).tolist() == [5]
    assert buf.topm_flags.tolist() == [True, False, False]
    assert select_parent_ids(buf, 2).tolist() == [2, 9]
    assert select_parent_ids(buf, 1).tolist() == []
    short = SearchBuffer.from_lists([(5, 0.1), (int(DUMMY_ID), np.inf)], [])
    assert select_parent_ids(short, 3).tolist() == [5]


def _expand_fixture():
    x = uniform(10, 2)
    graph = np.array([[1, 2, 3]] + [[(i + 1) % 10, (i + 2) % 10, 7] for i in range(1, 10)])
    return x, graph


def test_expand_counts():
    x, graph = _expand_fixture()
    table = VisitedTable(6)
    buf = SearchBuffer(M=4, n_candidates=6)
    assert expand_candidates(graph, x, x[0], [0], buf, table) == 3
    assert buf.candidate_ids[:3].tolist() == [1, 2, 3]
    assert buf.candidate_dists[3:].tolist() == [np.inf] * 3
    assert expand_candidates(graph, x, x[0], [0], buf, table) == 0
    assert (buf.candidate_dists == np.inf).all()

    # Parents 4 and 5 both point at 7 (and 6 is shared as well).
    table = VisitedTable(6)
    evals = expand_candidates(graph, x, x[0], [4, 5], buf, table)
    assert buf.candidate_ids.tolist() == [5, 6, 7, 6, 7, 7]
    assert evals == len({5, 6, 7}) == 3
    assert table.ids() == {5, 6, 7}


def test_reset_examples():
    table = VisitedTable(8, "forgettable")
    for v in (1, 2, 3):
        table.insert(v)
    buf = SearchBuffer.from_lists([(2, 0.1), (9 | F, 0.2)], [])
    reset_table(table, buf)
    assert table.ids() == {2, 9} and table.resets == 1

    standard = VisitedTable(8)
    standard.insert(4)
    with pytest.warns(RuntimeWarning):
        reset_table(standard, buf)
    assert standard.ids() == {4}


def test_reset_every_iteration():
    x = uniform(500, 8)
    g = optimize(exact_knn_graph(x, 16), 8)
    params = SearchParams(k=5, M=16, hash_policy="forgettable", reset_interval=1, max_iterations=20)
    res = search_one(g, x, x[3] + 0.01, params)
    # One reset before every parent selection after the first; the last one
    # precedes the selection that finds no parent left.
    assert res.iterations < 20
    assert res.hash_resets == res.iterations


def test_search_on_line_grid():
    x = np.arange(256, dtype=np.float32)[:, None]
    g = exact_knn_graph(x, 4).ids
    # Each hop moves at most 2 grid steps, so allow enough iterations to cross the line.
    params = SearchParams(k=1, M=8, max_iterations=256)
    for j in (0, 17, 128, 255):
        res = search_one(g, x, x[j], params)
        assert res.ids.tolist() == [j] and res.dists.tolist() == [0.0]


def test_exhaustive_coverage_is_exact():
    x = uniform(1024, 8)
    g = optimize(exact_knn_graph(x, 32), 16)
    q = uniform(5, 8, seed=99)
    truth, _ = exact_topk(x, q, 10)
    # p*d = 1024 parents' worth of slots; sampling visits almost everything.
    params = SearchParams(k=10, M=1024, p=64, max_iterations=4)
    for qi in range(5):
        assert recall(search_one(g, x, q[qi], params).ids, truth[qi]) == 1.0


def test_search_deterministic_and_rejects_bad_k():
    x = uniform(400, 6)
    g = optimize(exact_knn_graph(x, 16), 8)
    params = SearchParams(k=5, M=16, p=2, seed=3)
    a = search_one(g, x, x[0] * 0.5, params)
    b = search_one(g, x, x[0] * 0.5, params)
    assert (a.ids == b.ids).all() and (a.dists == b.dists).all() and a.distance_evals == b.distance_evals
    with pytest.raises(UsageError):
        SearchParams(k=20, M=16)


@pytest.mark.parametrize("p", [1, 3])
def test_search_invariants(small_data, small_graph, small_queries, p):
    params = SearchParams(k=10, M=32, p=p)
    d = small_graph.shape[1]
    for qi in range(30):
        q = small_queries[qi]
        res = search_one(small_graph, small_data, q, params, trace=True)
        assert res.distance_evals <= p * d * (res.iterations + 1)
        assert len(res.evaluated) == res.distance_evals
        assert len(set(res.evaluated.tolist())) == len(res.evaluated)
        assert (res.ids >= 0).all() and (res.ids < len(small_data)).all()
        true = ((small_data[res.ids] - q) ** 2).sum(axis=1)
        assert np.allclose(true, res.dists, rtol=1e-5)
        assert (np.diff(res.dists) >= 0).all()


def test_mth_distance_is_non_increasing(small_data, small_graph, small_queries):
    params = SearchParams(k=10, M=32, p=2)
    d = small_graph.shape[1]
    for qi in range(10):
        q = small_queries[qi]
        buf, table, _ = init_random_sample(small_data, q, params, d)
        prev = np.inf
        for _ in range(50):
            update_topm_buffer(buf)
            assert buf.topm_dists[-1] <= prev
            prev = buf.topm_dists[-1]
            assert (buf.ids[: buf.M][buf.topm_dists < np.inf] & INDEX_MASK).max() < len(small_data)
            parents = select_parent_ids(buf, params.p)
            if len(parents) == 0:
                break
            expand_candidates(small_graph, small_data, q, parents, buf, table)


def test_forgettable_recall_and_evals(small_data, small_graph, small_queries):
    truth, _ = exact_topk(small_data, small_queries, 10)
    std = SearchParams(k=10, M=48)
    fgt = SearchParams(k=10, M=48, hash_policy="forgettable", reset_interval=1)
    r_std, r_fgt, e_std, e_fgt = [], [], 0, 0
    for qi, q in enumerate(small_queries):
        a = search_one(small_graph, small_data, q, std)
        b = search_one(small_graph, small_data, q, fgt)
        r_std.append(recall(a.ids, truth[qi]))
        r_fgt.append(recall(b.ids, truth[qi]))
        e_std += a.distance_evals
        e_fgt += b.distance_evals
    assert np.mean(r_fgt) >= np.mean(r_std) - 0.02
    assert e_fgt >= e_std


def test_forgettable_table_too_small():
    with pytest.raises(UsageError):
        SearchParams(M=256, hash_policy="forgettable", hash_bits=8).table_bits(32, 10_000)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert 8 <= SearchParams(M=32, hash_policy="forgettable").table_bits(16, 10_000) <= 13
