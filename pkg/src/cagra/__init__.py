"""Fixed out-degree proximity graphs for approximate nearest neighbour search.

Build an initial k-NN graph, optimize it into a fixed-degree search graph by
rank-based reordering and reverse-edge merging, then search it with a
buffered top-M traversal.

    >>> knn = exact_knn_graph(data, 64)
    >>> graph = optimize(knn, 32)
    >>> result = search_one(graph, data, query, SearchParams(k=10, M=64))
"""

import numba as _numba

# Prefer OpenMP; the bundled TBB is too old and only produces a warning.
_numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

from .core import FormatError, UsageError, batch_recall, distance, exact_topk, recall  # noqa: E402
from .engine import (  # noqa: E402
    BatchResult,
    BenchRecord,
    ExecutionMode,
    batch_search,
    choose_mode,
    run_benchmark,
    search_shared,
    write_bench_csv,
)
from .io import load_graph, load_vecs, save_graph, save_vecs  # noqa: E402
from .knn import KnnGraph, NNDescentParams, build_knn_graph, exact_knn_graph, nn_descent, sort_neighbor_lists  # noqa: E402
from .metrics import GraphQualityReport, avg_2hop_count, quality_report, strong_cc_count  # noqa: E402
from .optimize import (  # noqa: E402
    RankedGraph,
    ReverseGraph,
    build_reverse_graph,
    count_detourable_routes,
    merge_graphs,
    optimize,
    reorder_and_prune,
)
from .search import SearchBuffer, SearchParams, SearchResult, VisitedTable, search_one  # noqa: E402

__all__ = [
    "BatchResult", "BenchRecord", "ExecutionMode", "FormatError", "GraphQualityReport", "KnnGraph",
    "NNDescentParams", "RankedGraph", "ReverseGraph", "SearchBuffer", "SearchParams", "SearchResult",
    "UsageError", "VisitedTable", "avg_2hop_count", "batch_recall", "batch_search", "build_knn_graph",
    "build_reverse_graph", "choose_mode", "count_detourable_routes", "distance", "exact_knn_graph",
    "exact_topk", "load_graph", "load_vecs", "merge_graphs", "nn_descent", "optimize", "quality_report",
    "recall", "reorder_and_prune", "run_benchmark", "save_graph", "save_vecs", "search_one",
    "search_shared", "sort_neighbor_lists", "strong_cc_count", "write_bench_csv",
]
