"""
Building a search graph
=======================

From raw vectors to a fixed out-degree graph: k-NN graph first, then
detour-based reordering, pruning and reverse-edge merging.
"""

# %%
import numpy as np

import cagra
from cagra.optimize import count_detourable_routes, format_report, optimize

rng = np.random.default_rng(0)
data = rng.random((5000, 32), dtype=np.float32)

# %%
# The initial graph. ``exact`` is brute force; ``nn_descent`` scales better.
knn = cagra.build_knn_graph(data, 32, method="nn_descent")
exact = cagra.exact_knn_graph(data, 32)
print("builder:", knn.stats)
print("k-NN graph recall:", round(cagra.knn.graph_recall(knn.ids, exact.ids), 4))

# %%
# Rank mode only needs the id matrix. Ties are broken by initial rank.
counts = count_detourable_routes(exact)
print("mean detourable routes per edge by rank:", counts.mean(axis=0)[:8].round(2))

# %%
graph, stats = optimize(exact, 16, return_stats=True)
print(format_report(stats))
print("graph shape:", graph.shape)

# %%
# Save it and read it back.
cagra.io.save_graph(graph, "/tmp/demo_graph.bin")
assert (cagra.io.load_graph("/tmp/demo_graph.bin") == graph).all()
