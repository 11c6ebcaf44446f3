import numpy as np
import pytest

from cagra import SearchParams, UsageError, exact_topk, recall, search_one
from cagra.engine import (
    CSV_COLUMNS,
    PER_QUERY,
    SHARED,
    ExecutionMode,
    batch_search,
    choose_mode,
    read_bench_csv,
    run_benchmark,
    search_shared,
    write_bench_csv,
)


def test_choose_mode_examples():
    assert choose_mode(10_000, 64, b_T=108, M_T=512).mode == PER_QUERY
    assert choose_mode(1, 64).mode == SHARED
    assert choose_mode(10_000, 1024).mode == SHARED
    assert choose_mode(108, 512, b_T=108).mode == PER_QUERY
    assert choose_mode(107, 64, b_T=108).mode == SHARED
    with pytest.raises(UsageError):
        choose_mode(1, 1, b_T=0)


def test_execution_mode_validation():
    with pytest.raises(UsageError):
        ExecutionMode(SHARED, team_count=1)
    with pytest.raises(UsageError):
        ExecutionMode("gpu")


@pytest.mark.parametrize("params", [SearchParams(k=10, M=32, p=2), SearchParams(k=5, M=24, hash_policy="forgettable")])
def test_batch_equals_search_one(small_data, small_graph, small_queries, params):
    res = batch_search(small_graph, small_data, small_queries, params, ExecutionMode(PER_QUERY))
    assert len(res) == len(small_queries)
    for qi in range(0, len(small_queries), 7):
        one = search_one(small_graph, small_data, small_queries[qi], params)
        assert (res.ids[qi] == one.ids).all()
        assert (res.dists[qi] == one.dists).all()
        assert res.distance_evals[qi] == one.distance_evals
        assert res[qi].iterations == one.iterations


def test_batch_independent_of_worker_count(small_data, small_graph, small_queries):
    params = SearchParams(k=10, M=32)
    one = batch_search(small_graph, small_data, small_queries, params, workers=1)
    many = batch_search(small_graph, small_data, small_queries, params, workers=4)
    assert (one.ids == many.ids).all() and (one.dists == many.dists).all()


def test_shared_mode_evaluates_more(small_data, small_graph, small_queries):
    params = SearchParams(k=10, M=32, p=1, max_iterations=20)
    d = small_graph.shape[1]
    for qi in range(10):
        q = small_queries[qi]
        single = search_one(small_graph, small_data, q, params)
        shared = search_shared(small_graph, small_data, q, params, team_count=4, trace=True)
        assert shared.distance_evals >= single.distance_evals
        assert len(set(shared.evaluated.tolist())) == shared.distance_evals
        assert shared.distance_evals <= 4 * d * (shared.iterations + 1)
        assert (np.diff(shared.dists) >= 0).all() and len(set(shared.ids.tolist())) == 10


def test_shared_batch_matches_single_query(small_data, small_graph, small_queries):
    params = SearchParams(k=10, M=32)
    mode = ExecutionMode(SHARED, 3)
    res = batch_search(small_graph, small_data, small_queries[:20], params, mode)
    for qi in range(20):
        one = search_shared(small_graph, small_data, small_queries[qi], params, team_count=3)
        assert (res.ids[qi] == one.ids).all()
    truth, _ = exact_topk(small_data, small_queries[:20], 10)
    per_query = batch_search(small_graph, small_data, small_queries[:20], params)
    shared_recall = np.mean([recall(r, t) for r, t in zip(res.ids, truth)])
    single_recall = np.mean([recall(r, t) for r, t in zip(per_query.ids, truth)])
    assert shared_recall >= single_recall - 0.02


def test_empty_query_list(small_data, small_graph):
    res = batch_search(small_graph, small_data, np.empty((0, small_data.shape[1]), dtype=np.float32), SearchParams())
    assert len(res) == 0


def test_dimension_mismatch(small_data, small_graph):
    with pytest.raises(UsageError):
        batch_search(small_graph, small_data, np.zeros((3, 5), dtype=np.float32), SearchParams())


def test_run_benchmark_grid(small_data, small_graph, small_queries, tmp_path):
    truth, _ = exact_topk(small_data, small_queries, 100)
    grid = [{"M": m} for m in (16, 32, 64)]
    records = run_benchmark(small_graph, small_data, small_queries, truth, grid, mode=PER_QUERY, dataset="toy")
    assert len(records) == 3
    recalls = [r.recall for r in records]
    assert recalls == sorted(recalls)
    assert all(0 <= r.recall <= 1 and r.qps > 0 for r in records)

    text = write_bench_csv(records, tmp_path / "bench.csv")
    assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
    rows = read_bench_csv(tmp_path / "bench.csv")
    assert [int(r["M"]) for r in rows] == [16, 32, 64]
    assert rows[0]["dataset"] == "toy" and rows[0]["mode"] == PER_QUERY

    both = run_benchmark(small_graph, small_data, small_queries, truth, [{"k": 10, "M": 128}, {"k": 100, "M": 128}])
    assert [r.k for r in both] == [10, 100]


def test_run_benchmark_errors(small_data, small_graph, small_queries):
    truth, _ = exact_topk(small_data, small_queries, 10)
    with pytest.raises(UsageError):
        run_benchmark(small_graph, small_data, small_queries[:0], truth[:0], [{}])
    with pytest.raises(UsageError):
        run_benchmark(small_graph, small_data, small_queries, None, [{}])
    with pytest.raises(UsageError):
        run_benchmark(small_graph, small_data, small_queries, truth, [{"k": 20, "M": 32}])
