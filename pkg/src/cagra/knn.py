"""Initial k-NN graph construction.

Two builders produce the same :class:`KnnGraph` layout: an exact brute-force
builder, used as an oracle and for small datasets, and NN-descent for
larger ones. Rows are always sorted ascending by (distance, id), so a
neighbour's position in its row is its initial rank.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np

from .core import UsageError, as_dataset, rng_below, rng_next, sort_keys, sqdist, topk_rows


@dataclass
class KnnGraph:
    ids: np.ndarray
    dists: np.ndarray | None = None
    stats: dict = field(default_factory=dict)

    @property
    def n_points(self) -> int:
        return self.ids.shape[0]

    @property
    def degree(self) -> int:
        return self.ids.shape[1]


@dataclass(frozen=True)
class NNDescentParams:
    sample_rate: float = 0.5
    termination_delta: float = 0.001
    max_rounds: int = 20
    seed: int = 0
    # Nodes whose local joins are evaluated before their updates are applied.
    block_size: int = 4096

    def __post_init__(self):
        if not 0.0 < self.sample_rate <= 1.0:
            raise UsageError(f"sample_rate must be in (0, 1], got {self.sample_rate}")
        if not 0.0 < self.termination_delta < 1.0:
            raise UsageError(f"termination_delta must be in (0, 1), got {self.termination_delta}")
        if self.max_rounds < 1:
            raise UsageError("max_rounds must be >= 1")
        if self.block_size < 1:
            raise UsageError("block_size must be >= 1")


def exact_knn_graph(data, k: int) -> KnnGraph:
    """Exact k-NN graph: each row is the k nearest other points."""
    x = as_dataset(data)
    if not 1 <= k < x.shape[0]:
        raise UsageError(f"k must satisfy 1 <= k < N={x.shape[0]}, got {k}")
    ids, dists = topk_rows(x, x, k, True)
    return KnnGraph(ids, dists, {"builder": "exact"})


def sort_neighbor_lists(graph: KnnGraph) -> KnnGraph:
    """Sort every row ascending by (distance, id)."""
    if graph.dists is None:
        raise UsageError("sorting neighbour lists requires per-edge distances")
    order = np.argsort(sort_keys(graph.dists, graph.ids), axis=1, kind="stable")
    return KnnGraph(
        np.take_along_axis(graph.ids, order, axis=1),
        np.take_along_axis(graph.dists, order, axis=1),
        dict(graph.stats),
    )


def graph_recall(approx: np.ndarray, exact: np.ndarray) -> float:
    """Mean per-node overlap between two k-NN id matrices of equal shape."""
    approx = np.asarray(approx)
    exact = np.asarray(exact)
    if approx.shape != exact.shape:
        raise UsageError(f"shape mismatch {approx.shape} vs {exact.shape}")
    hits = (approx[:, :, None] == exact[:, None, :]).any(axis=2).sum()
    return float(hits / exact.size)


@numba.njit(cache=True, inline="always")
def _less(d1, i1, d2, i2):
    return d1 < d2 or (d1 == d2 and i1 < i2)


@numba.njit(cache=True)
def _row_insert(ids, dists, isnew, row, cand, dist):
    """Bounded sorted insertion of ``cand`` into ``row``; returns 1 on insert."""
    k = ids.shape[1]
    if not _less(dist, cand, dists[row, k - 1], ids[row, k - 1]):
        return 0
    for t in range(k):
        if ids[row, t] == cand:
            return 0
    pos = k - 1
    while pos > 0 and _less(dist, cand, dists[row, pos - 1], ids[row, pos - 1]):
        ids[row, pos] = ids[row, pos - 1]
        dists[row, pos] = dists[row, pos - 1]
        isnew[row, pos] = isnew[row, pos - 1]
        pos -= 1
    ids[row, pos] = cand
    dists[row, pos] = dist
    isnew[row, pos] = True
    return 1


@numba.njit(cache=True)
def _contains(buf, count, value):
    for t in range(count):
        if buf[t] == value:
            return True
    return False


@numba.njit(cache=True)
def _init_rows(data, k, state):
    n = data.shape[0]
    ids = np.empty((n, k), dtype=np.int32)
    dists = np.empty((n, k), dtype=np.float32)
    isnew = np.ones((n, k), dtype=np.bool_)
    row = np.empty(k, dtype=np.int32)
    row_d = np.empty(k, dtype=np.float32)
    keys = np.empty(k, dtype=np.uint64)
    for v in range(n):
        if 2 * k >= n:
            # Dense case: partial Fisher-Yates over the ids other than v.
            pool = np.empty(n - 1, dtype=np.int32)
            for j in range(n - 1):
                pool[j] = j if j < v else j + 1
            for t in range(k):
                j = t + rng_below(state, n - 1 - t)
                pool[t], pool[j] = pool[j], pool[t]
                row[t] = pool[t]
        else:
            t = 0
            while t < k:
                u = rng_below(state, n)
                if u != v and not _contains(row, t, u):
                    row[t] = u
                    t += 1
        for t in range(k):
            row_d[t] = sqdist(data[v], data[row[t]])
        bits = row_d.view(np.uint32)
        for t in range(k):
            keys[t] = (np.uint64(bits[t]) << np.uint64(32)) | np.uint64(t)
        order = np.argsort(keys, kind="mergesort")
        for t in range(k):
            ids[v, t] = row[order[t]]
            dists[v, t] = row_d[order[t]]
    return ids, dists, isnew


@numba.njit(cache=True)
def _build_candidates(ids, isnew, n_sample, state):
    """Sample new/old candidate sets from forward and reverse neighbours.

    Returns padded (-1) arrays ``new`` (N, n_sample) and ``old`` (N, 2k).
    Forward entries that get sampled as new are flagged old.
    """
    n, k = ids.shape
    rev_new = np.full((n, k), -1, dtype=np.int32)
    rev_old = np.full((n, k), -1, dtype=np.int32)
    seen_new = np.zeros(n, dtype=np.int64)
    seen_old = np.zeros(n, dtype=np.int64)
    # Reservoir sampling caps each reverse list at k entries.
    for v in range(n):
        for t in range(k):
            u = ids[v, t]
            if isnew[v, t]:
                c = seen_new[u]
                if c < k:
                    rev_new[u, c] = v
                else:
                    j = rng_below(state, c + 1)
                    if j < k:
                        rev_new[u, j] = v
                seen_new[u] = c + 1
            else:
                c = seen_old[u]
                if c < k:
                    rev_old[u, c] = v
                else:
                    j = rng_below(state, c + 1)
                    if j < k:
                        rev_old[u, j] = v
                seen_old[u] = c + 1

    new = np.full((n, n_sample), -1, dtype=np.int32)
    old = np.full((n, 2 * k), -1, dtype=np.int32)
    pool = np.empty(2 * k, dtype=np.int32)
    from_row = np.empty(2 * k, dtype=np.int64)
    for v in range(n):
        m = 0
        for t in range(k):
            if isnew[v, t]:
                pool[m] = ids[v, t]
                from_row[m] = t
                m += 1
        for t in range(min(seen_new[v], k)):
            u = rev_new[v, t]
            if not _contains(pool, m, u):
                pool[m] = u
                from_row[m] = -1
                m += 1
        take = min(m, n_sample)
        for t in range(take):
            j = t + rng_below(state, m - t)
            pool[t], pool[j] = pool[j], pool[t]
            from_row[t], from_row[j] = from_row[j], from_row[t]
            new[v, t] = pool[t]
            if from_row[t] >= 0:
                isnew[v, from_row[t]] = False
        c = 0
        for t in range(k):
            u = ids[v, t]
            if not isnew[v, t] and not _contains(new[v], take, u) and not _contains(old[v], c, u):
                old[v, c] = u
                c += 1
        for t in range(min(seen_old[v], k)):
            u = rev_old[v, t]
            if not _contains(new[v], take, u) and not _contains(old[v], c, u):
                if c < 2 * k:
                    old[v, c] = u
                    c += 1
    return new, old


@numba.njit(cache=True, parallel=True)
def _local_join(data, new, old, start, stop, pair_a, pair_b, pair_d, counts):
    n_sample = new.shape[1]
    n_old = old.shape[1]
    for v in numba.prange(start, stop):
        slot = v - start
        c = 0
        for i in range(n_sample):
            a = new[v, i]
            if a < 0:
                break
            for j in range(i + 1, n_sample):
                b = new[v, j]
                if b < 0:
                    break
                pair_a[slot, c] = a
                pair_b[slot, c] = b
                pair_d[slot, c] = sqdist(data[a], data[b])
                c += 1
            for j in range(n_old):
                b = old[v, j]
                if b < 0:
                    break
                if b == a:
                    continue
                pair_a[slot, c] = a
                pair_b[slot, c] = b
                pair_d[slot, c] = sqdist(data[a], data[b])
                c += 1
        counts[slot] = c


@numba.njit(cache=True)
def _apply_updates(ids, dists, isnew, pair_a, pair_b, pair_d, counts):
    inserted = 0
    for slot in range(counts.shape[0]):
        for c in range(counts[slot]):
            a = pair_a[slot, c]
            b = pair_b[slot, c]
            d = pair_d[slot, c]
            inserted += _row_insert(ids, dists, isnew, a, b, d)
            inserted += _row_insert(ids, dists, isnew, b, a, d)
    return inserted


def nn_descent(data, k: int, params: NNDescentParams | None = None) -> KnnGraph:
    """Approximate k-NN graph by NN-descent local joins.

    Local-join distances for a block of nodes are evaluated in parallel and
    then applied in node order, so the result equals a sequential insertion
    order and is identical for any thread count.
    """
    params = params or NNDescentParams()
    x = as_dataset(data)
    n = x.shape[0]
    if not 1 <= k < n:
        raise UsageError(f"k must satisfy 1 <= k < N={n}, got {k}")
    state = np.array([params.seed], dtype=np.uint64)
    rng_next(state)
    ids, dists, isnew = _init_rows(x, k, state)

    n_sample = max(1, math.ceil(params.sample_rate * k))
    max_pairs = n_sample * (n_sample - 1) // 2 + n_sample * 2 * k
    block = min(params.block_size, n)
    pair_a = np.empty((block, max_pairs), dtype=np.int32)
    pair_b = np.empty((block, max_pairs), dtype=np.int32)
    pair_d = np.empty((block, max_pairs), dtype=np.float32)
    counts = np.empty(block, dtype=np.int64)

    threshold = params.termination_delta * n * k
    history = []
    converged = False
    rounds = 0
    for rounds in range(1, params.max_rounds + 1):
        new, old = _build_candidates(ids, isnew, n_sample, state)
        inserted = 0
        for start in range(0, n, block):
            stop = min(start + block, n)
            counts[:] = 0
            _local_join(x, new, old, start, stop, pair_a, pair_b, pair_d, counts)
            inserted += _apply_updates(ids, dists, isnew, pair_a, pair_b, pair_d, counts[: stop - start])
        history.append(int(inserted))
        if inserted < threshold:
            converged = True
            break
    if not converged:
        warnings.warn(
            f"nn_descent did not converge within {params.max_rounds} rounds", RuntimeWarning, stacklevel=2
        )
    stats = {
        "builder": "nn_descent",
        "rounds": rounds,
        "converged": converged,
        "insertions": history,
    }
    return KnnGraph(ids, dists, stats)


def build_knn_graph(data, k: int, method: str = "auto", params: NNDescentParams | None = None) -> KnnGraph:
    """Build a distance-sorted k-NN graph; ``auto`` is exact for N <= 4096."""
    x = as_dataset(data)
    if method == "auto":
        method = "exact" if x.shape[0] <= 4096 else "nn_descent"
    if method == "exact":
        return exact_knn_graph(x, k)
    if method == "nn_descent":
        return nn_descent(x, k, params)
    raise UsageError(f"unknown k-NN method {method!r}")
