"""
Graph quality: 2-hop reach and strong connectivity
==================================================

Compare the plain truncated k-NN graph with partially and fully optimized
graphs of the same degree.
"""

# %%
import numpy as np

import cagra
from cagra.optimize import optimize

data = np.random.default_rng(1).random((5000, 32), dtype=np.float32)
knn = cagra.exact_knn_graph(data, 32)
d = 16

variants = {
    "truncated": knn.ids[:, :d],
    "reorder only": optimize(knn, d, reverse_edges=False),
    "reverse only": optimize(knn, d, reorder=False),
    "full": optimize(knn, d),
}

# %%
print(f"{'variant':>14} {'avg 2-hop':>10} {'strong CC':>10}   (max 2-hop = {d + d * d})")
for name, g in variants.items():
    print(f"{name:>14} {cagra.metrics.avg_2hop_count(g):10.1f} {cagra.metrics.strong_cc_count(g):10d}")

# %%
# The full report that ``cagra metrics`` prints.
print(cagra.metrics.quality_report(variants["full"]).to_lines())
