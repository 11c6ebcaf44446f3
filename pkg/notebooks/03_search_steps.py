"""
One query, step by step
=======================

The search keeps a top-M list followed by candidate slots. Each iteration
merges candidates into the list, flags up to p parents and writes their
neighbours into the candidate slots. Distances are computed only for nodes
not yet in the visited table.
"""

# %%
import numpy as np

from cagra import SearchParams, exact_knn_graph, exact_topk, optimize, recall, search_one
from cagra.search import expand_candidates, init_random_sample, select_parent_ids, update_topm_buffer

rng = np.random.default_rng(2)
data = rng.random((5000, 16), dtype=np.float32)
graph = optimize(exact_knn_graph(data, 32), 16)
q = rng.random(16, dtype=np.float32)
params = SearchParams(k=10, M=32, p=2)

# %%
buf, table, evals = init_random_sample(data, q, params, graph.shape[1])
for it in range(100):
    update_topm_buffer(buf)
    parents = select_parent_ids(buf, params.p)
    if len(parents) == 0:
        break
    evals += expand_candidates(graph, data, q, parents, buf, table)
    if it % 5 == 0:
        print(f"iteration {it:3d}  M-th distance {buf.topm_dists[-1]:.4f}  evals {evals}")

# %%
# The kernel does the same in one call.
res = search_one(graph, data, q, params)
truth, _ = exact_topk(data, q, 10)
print("iterations", res.iterations, "evals", res.distance_evals, "recall@10", recall(res.ids, truth))
print("same top-M as the manual loop:", (buf.topm_ids[:10] == res.ids).all())

# %%
# A small table that is reset every iteration trades memory for re-evaluations.
forget = search_one(graph, data, q, SearchParams(k=10, M=32, p=2, hash_policy="forgettable"))
print("forgettable: evals", forget.distance_evals, "resets", forget.hash_resets, "recall", recall(forget.ids, truth))
