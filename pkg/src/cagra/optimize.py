"""Turn a distance-sorted k-NN graph into the fixed-degree search graph.

Pipeline: count detourable routes per edge, reorder each row by that count
and keep the first ``d`` entries, build the rank-sorted reverse graph, then
interleave pruned and reverse rows. The rank-based variant works on the id
matrix alone and never sees vector data.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numba
import numpy as np

from .core import UsageError, as_dataset, sort_keys, sqdist
from .knn import KnnGraph

_CHUNK = 256


@dataclass
class RankedGraph:
    """Pruned rows; a neighbour's column is its final rank."""

    ids: np.ndarray
    detour_counts: np.ndarray


@dataclass
class ReverseGraph:
    """Variable-length rows stored in an (N, cap) array padded with -1."""

    ids: np.ndarray
    lengths: np.ndarray

    def row(self, v: int) -> np.ndarray:
        return self.ids[v, : self.lengths[v]]


@numba.njit(cache=True, parallel=True)
def _count_by_rank(ids):
    n, deg = ids.shape
    counts = np.zeros((n, deg), dtype=np.int32)
    n_chunks = (n + _CHUNK - 1) // _CHUNK
    for c in numba.prange(n_chunks):
        pos = np.full(n, -1, dtype=np.int32)
        for x in range(c * _CHUNK, min((c + 1) * _CHUNK, n)):
            for r in range(deg):
                pos[ids[x, r]] = r
            for j in range(deg):
                z = ids[x, j]
                for i in range(deg):
                    r = pos[ids[z, i]]
                    if r >= 0 and max(i, j) < r:
                        counts[x, r] += 1
            for r in range(deg):
                pos[ids[x, r]] = -1
    return counts


@numba.njit(cache=True, parallel=True)
def _count_by_distance(ids, data):
    n, deg = ids.shape
    counts = np.zeros((n, deg), dtype=np.int32)
    evals = np.zeros(n, dtype=np.int64)
    n_chunks = (n + _CHUNK - 1) // _CHUNK
    for c in numba.prange(n_chunks):
        pos = np.full(n, -1, dtype=np.int32)
        dx = np.empty(deg, dtype=np.float32)
        for x in range(c * _CHUNK, min((c + 1) * _CHUNK, n)):
            e = 0
            for r in range(deg):
                pos[ids[x, r]] = r
                dx[r] = sqdist(data[x], data[ids[x, r]])
                e += 1
            for j in range(deg):
                z = ids[x, j]
                for i in range(deg):
                    y = ids[z, i]
                    r = pos[y]
                    if r < 0 or not dx[j] < dx[r]:
                        continue
                    e += 1
                    if sqdist(data[z], data[y]) < dx[r]:
                        counts[x, r] += 1
            for r in range(deg):
                pos[ids[x, r]] = -1
            evals[x] = e
    return counts, evals.sum()


def _check_sorted(graph: KnnGraph) -> None:
    if graph.dists is None:
        return
    keys = sort_keys(graph.dists, graph.ids)
    if (keys[:, 1:] <= keys[:, :-1]).any():
        raise UsageError("neighbour lists must be sorted ascending by (distance, id)")


def _check_ids(ids: np.ndarray) -> np.ndarray:
    ids = np.ascontiguousarray(ids, dtype=np.int32)
    if ids.ndim != 2:
        raise UsageError(f"graph must be 2-D, got shape {ids.shape}")
    n = ids.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise UsageError("graph ids must lie in [0, N)")
    return ids


def count_detourable_routes(graph: KnnGraph, mode: str = "rank", data=None) -> np.ndarray:
    """Per-edge number of two-hop routes X->Z->Y that are shorter than X->Y.

    A route counts when both legs are strictly shorter than the direct edge.
    ``mode="rank"`` measures edge length by position in the source row;
    ``mode="distance"`` recomputes squared distances from ``data`` on the fly.
    """
    _check_sorted(graph)
    ids = _check_ids(graph.ids)
    if mode == "rank":
        if data is not None:
            raise UsageError("rank mode works on the graph alone and takes no vector data")
        return _count_by_rank(ids)
    if mode == "distance":
        if data is None:
            raise UsageError("distance mode needs the dataset")
        x = as_dataset(data)
        if x.shape[0] != ids.shape[0]:
            raise UsageError("dataset and graph disagree on N")
        counts, _ = _count_by_distance(ids, x)
        return counts
    raise UsageError(f"mode must be 'rank' or 'distance', got {mode!r}")


def reorder_and_prune(graph: KnnGraph | np.ndarray, counts: np.ndarray, d: int) -> RankedGraph:
    """Stable-sort each row by detour count (ties keep initial rank), keep ``d``."""
    ids = graph.ids if isinstance(graph, KnnGraph) else np.asarray(graph)
    counts = np.asarray(counts)
    if counts.shape != ids.shape:
        raise UsageError(f"counts shape {counts.shape} does not match graph {ids.shape}")
    if not 1 <= d <= ids.shape[1]:
        raise UsageError(f"d must satisfy 1 <= d <= {ids.shape[1]}, got {d}")
    order = np.argsort(counts, axis=1, kind="stable")[:, :d]
    return RankedGraph(
        np.ascontiguousarray(np.take_along_axis(ids, order, axis=1), dtype=np.int32),
        np.ascontiguousarray(np.take_along_axis(counts, order, axis=1)),
    )


def build_reverse_graph(graph: RankedGraph | np.ndarray, cap: int | None = None) -> ReverseGraph:
    """Reverse every edge, ordering each row by (rank in source row, source id).

    Rows keep at most ``cap`` entries (the largest ranks are dropped);
    ``cap=None`` keeps every reversed edge. Negative ids in the input are
    treated as padding.
    """
    ids = graph.ids if isinstance(graph, RankedGraph) else np.asarray(graph)
    n, deg = ids.shape
    if cap is not None and cap < 1:
        raise UsageError(f"cap must be >= 1, got {cap}")
    src = np.repeat(np.arange(n, dtype=np.int64), deg)
    rank = np.tile(np.arange(deg, dtype=np.int64), n)
    dst = ids.ravel().astype(np.int64)
    keep = dst >= 0
    src, rank, dst = src[keep], rank[keep], dst[keep]
    order = np.lexsort((src, rank, dst))
    src, dst = src[order], dst[order]
    in_degree = np.bincount(dst, minlength=n)
    if cap is None:
        cap = max(int(in_degree.max(initial=0)), 1)
    starts = np.concatenate(([0], np.cumsum(in_degree)[:-1]))
    slot = np.arange(len(dst)) - starts[dst]
    keep = slot < cap
    out = np.full((n, cap), -1, dtype=np.int32)
    out[dst[keep], slot[keep]] = src[keep]
    return ReverseGraph(out, np.minimum(in_degree, cap).astype(np.int32))


@numba.njit(cache=True)
def _merge_rows(pruned, rev, rev_len, d):
    n = pruned.shape[0]
    out = np.full((n, d), -1, dtype=np.int32)
    n_from_rev = np.zeros(n, dtype=np.int32)
    short = -1
    half = d // 2
    for v in range(n):
        n_rev = min(rev_len[v], half)
        pi = 0
        ri = 0
        m = 0
        while m < d and (pi < pruned.shape[1] or ri < n_rev):
            while pi < pruned.shape[1]:
                u = pruned[v, pi]
                pi += 1
                dup = False
                for t in range(m):
                    if out[v, t] == u:
                        dup = True
                        break
                if not dup:
                    out[v, m] = u
                    m += 1
                    break
            if m == d:
                break
            while ri < n_rev:
                u = rev[v, ri]
                ri += 1
                dup = False
                for t in range(m):
                    if out[v, t] == u:
                        dup = True
                        break
                if not dup:
                    out[v, m] = u
                    m += 1
                    n_from_rev[v] += 1
                    break
        if m < d and short < 0:
            short = v
    return out, n_from_rev, short


def merge_graphs(pruned: RankedGraph | np.ndarray, reverse: ReverseGraph, d: int | None = None) -> np.ndarray:
    """Interleave pruned and reverse rows into exactly ``d`` distinct ids per node.

    Each row alternates pruned, reverse, pruned, ... drawing at most ``d // 2``
    entries from the head of the reverse row. Reverse entries already emitted
    are skipped and the gap is filled from the pruned row.
    """
    p = _check_ids(pruned.ids if isinstance(pruned, RankedGraph) else pruned)
    if d is None:
        d = p.shape[1]
    if p.shape[1] != d:
        raise UsageError(f"pruned graph has degree {p.shape[1]}, expected {d}")
    if reverse.ids.shape[0] != p.shape[0]:
        raise UsageError("pruned and reverse graphs disagree on N")
    out, _, short = _merge_rows(p, np.ascontiguousarray(reverse.ids, dtype=np.int32), reverse.lengths, d)
    if short >= 0:
        raise UsageError(f"node {short} has fewer than {d} distinct neighbours")
    return out


def optimize(
    graph: KnnGraph,
    d: int,
    mode: str = "rank",
    data=None,
    *,
    reorder: bool = True,
    reverse_edges: bool = True,
    return_stats: bool = False,
):
    """Build the final fixed out-degree graph from a sorted k-NN graph.

    ``reorder=False`` prunes by plain truncation and ``reverse_edges=False``
    skips the reverse merge; both switches exist to measure each step's
    contribution. With ``return_stats=True`` a ``(graph, stats)`` pair is
    returned, where ``stats`` holds per-stage wall times and edge counts.
    """
    if not 1 <= d <= graph.degree:
        raise UsageError(f"d must satisfy 1 <= d <= d_init={graph.degree}, got {d}")
    stats = {"N": graph.n_points, "d_init": graph.degree, "d": d, "mode": mode if reorder else "none"}
    t0 = time.perf_counter()
    if reorder:
        counts = count_detourable_routes(graph, mode, data)
    else:
        _check_sorted(graph)
        counts = np.zeros(graph.ids.shape, dtype=np.int32)
    t1 = time.perf_counter()
    pruned = reorder_and_prune(graph, counts, d)
    t2 = time.perf_counter()
    stats["time_count"] = t1 - t0
    stats["time_prune"] = t2 - t1
    stats["detourable_routes"] = int(counts.sum())
    if reverse_edges:
        rev = build_reverse_graph(pruned, d)
        t3 = time.perf_counter()
        out, from_rev, short = _merge_rows(pruned.ids, rev.ids, rev.lengths, d)
        if short >= 0:
            raise UsageError(f"node {short} has fewer than {d} distinct neighbours")
        t4 = time.perf_counter()
        stats["time_reverse"] = t3 - t2
        stats["time_merge"] = t4 - t3
        stats["reverse_edges"] = int(rev.lengths.sum())
        stats["merged_reverse_edges"] = int(from_rev.sum())
    else:
        out = pruned.ids
        stats["time_reverse"] = 0.0
        stats["time_merge"] = 0.0
        stats["reverse_edges"] = 0
        stats["merged_reverse_edges"] = 0
    stats["edges"] = int(out.size)
    stats["time_total"] = time.perf_counter() - t0
    if return_stats:
        return out, stats
    return out


def format_report(stats: dict) -> str:
    """Render a stats mapping as ``key=value`` lines."""
    lines = []
    for key, value in stats.items():
        if isinstance(value, float):
            value = f"{value:.6g}"
        elif isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key}={value}")
    return "\n".join(lines)
