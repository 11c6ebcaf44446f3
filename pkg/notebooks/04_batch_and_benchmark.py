"""
Batches, execution modes and a recall/QPS sweep
===============================================
"""

# %%
import numpy as np

from cagra import SearchParams, exact_knn_graph, exact_topk, optimize
from cagra.engine import ExecutionMode, batch_search, choose_mode, run_benchmark, write_bench_csv

rng = np.random.default_rng(3)
data = rng.random((10000, 32), dtype=np.float32)
queries = rng.random((500, 32), dtype=np.float32)
graph = optimize(exact_knn_graph(data, 32), 16)
truth, _ = exact_topk(data, queries, 10)

# %%
# Large batches get one worker per query; a lone query or a huge M gets teams.
for batch, M in [(10000, 64), (1, 64), (10000, 1024)]:
    print(batch, M, "->", choose_mode(batch, M).mode)

# %%
params = SearchParams(k=10, M=32)
per_query = batch_search(graph, data, queries, params)
shared = batch_search(graph, data, queries, params, ExecutionMode("shared_query_workers", 4))
print("mean evals per query: per-query", per_query.distance_evals.mean(), "shared", shared.distance_evals.mean())

# %%
grid = [{"M": m, "p": p} for m in (16, 32, 64, 128) for p in (1, 2)]
records = run_benchmark(graph, data, queries, truth, grid, mode="per_query_worker", dataset="uniform32")
print(write_bench_csv(records))
