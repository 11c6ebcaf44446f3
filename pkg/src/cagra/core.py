"""Shared primitives: dataset validation, squared-L2 distance, the exact
top-k oracle and recall.

Every ordering in the package uses the same key: smaller distance first,
then smaller id. Distances are squared L2 accumulated sequentially in
float32 by a single kernel, so the oracle and the graph search always agree
bit-for-bit on the value assigned to a pair of vectors.
"""

from __future__ import annotations

import numba
import numpy as np

# The top bit of a 32-bit node index is reserved for the parent flag.
MAX_POINTS = 2**31 - 1
INDEX_MASK = np.uint32(0x7FFFFFFF)
PARENT_FLAG = np.uint32(0x80000000)


class UsageError(ValueError):
    """Raised when an operation is called with arguments outside its contract."""


class FormatError(ValueError):
    """Raised when a file does not match its binary layout."""


def as_dataset(data) -> np.ndarray:
    """Validate and return ``data`` as a C-contiguous (N, n) float32 array."""
    x = np.ascontiguousarray(data, dtype=np.float32)
    if x.ndim != 2:
        raise UsageError(f"dataset must be 2-D, got shape {x.shape}")
    n_points, dim = x.shape
    if n_points < 1 or dim < 1:
        raise UsageError(f"dataset must have N >= 1 and n >= 1, got {x.shape}")
    if n_points > MAX_POINTS:
        raise UsageError(f"N={n_points} exceeds {MAX_POINTS} (MSB is the parent flag)")
    if not np.isfinite(x).all():
        raise UsageError("dataset contains NaN or Inf")
    return x


def as_queries(queries, dim: int) -> np.ndarray:
    q = np.ascontiguousarray(queries, dtype=np.float32)
    if q.ndim == 1:
        q = q[None, :]
    if q.ndim != 2 or q.shape[1] != dim:
        raise UsageError(f"queries must have dimension {dim}, got shape {q.shape}")
    if not np.isfinite(q).all():
        raise UsageError("queries contain NaN or Inf")
    return q


@numba.njit(cache=True, inline="always")
def sqdist(a, b):
    acc = np.float32(0.0)
    for i in range(a.shape[0]):
        t = a[i] - b[i]
        acc += t * t
    return acc


def sort_keys(dists: np.ndarray, ids: np.ndarray) -> np.ndarray:
    """Pack (dist, id) pairs into uint64 keys whose integer order is the (dist, id) order.

    Valid for non-negative float32 distances (including +inf), whose IEEE bit
    patterns sort like unsigned integers.
    """
    bits = np.ascontiguousarray(dists, dtype=np.float32).view(np.uint32).astype(np.uint64)
    return (bits << np.uint64(32)) | (np.asarray(ids).astype(np.uint64) & np.uint64(0x7FFFFFFF))


def distance(a, b) -> float:
    """Squared Euclidean distance between two vectors."""
    a = np.ascontiguousarray(a, dtype=np.float32).ravel()
    b = np.ascontiguousarray(b, dtype=np.float32).ravel()
    if a.shape != b.shape:
        raise UsageError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    return float(sqdist(a, b))


@numba.njit(cache=True, parallel=True)
def topk_rows(data, queries, k, exclude_self):
    # exclude_self: query i is data row i and must not be returned.
    n_points = data.shape[0]
    n_q = queries.shape[0]
    out_ids = np.empty((n_q, k), dtype=np.int32)
    out_d = np.empty((n_q, k), dtype=np.float32)
    for qi in numba.prange(n_q):
        dists = np.empty(n_points, dtype=np.float32)
        for j in range(n_points):
            dists[j] = sqdist(queries[qi], data[j])
        bits = dists.view(np.uint32)
        keys = np.empty(n_points, dtype=np.uint64)
        for j in range(n_points):
            keys[j] = (np.uint64(bits[j]) << np.uint64(32)) | np.uint64(j)
        if exclude_self:
            keys[qi] = np.uint64(0xFFFFFFFFFFFFFFFF)
        if k < n_points:
            part = np.sort(np.partition(keys, k - 1)[:k])
        else:
            part = np.sort(keys)
        for t in range(k):
            j = np.int64(part[t] & np.uint64(0xFFFFFFFF))
            out_ids[qi, t] = j
            out_d[qi, t] = dists[j]
    return out_ids, out_d


def exact_topk(data, queries, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Brute-force k nearest neighbours.

    ``queries`` may be one vector or a (Q, n) batch. Returns ``(ids, dists)``
    shaped (Q, k) (or (k,) for a single vector), sorted by (distance, id).
    """
    x = as_dataset(data)
    single = np.ndim(queries) == 1
    q = as_queries(queries, x.shape[1])
    if not 1 <= k <= x.shape[0]:
        raise UsageError(f"k must satisfy 1 <= k <= N={x.shape[0]}, got {k}")
    ids, dists = topk_rows(x, q, k, False)
    if single:
        return ids[0], dists[0]
    return ids, dists


def recall(result_ids, truth_ids) -> float:
    """Fraction of ``truth_ids`` present in ``result_ids``."""
    result = np.asarray(result_ids).ravel()
    truth = np.asarray(truth_ids).ravel()
    if len(truth) == 0:
        raise UsageError("truth must contain at least one id")
    if len(np.unique(result)) != len(result) or len(np.unique(truth)) != len(truth):
        raise UsageError("duplicate ids in recall input")
    if len(result) != len(truth):
        raise UsageError(f"result has {len(result)} ids, truth has {len(truth)}")
    return len(np.intersect1d(result, truth)) / len(truth)


def batch_recall(result_ids: np.ndarray, truth_ids: np.ndarray, k: int | None = None) -> float:
    """Mean recall@k over rows; truth may carry more than k columns."""
    result_ids = np.asarray(result_ids)
    truth_ids = np.asarray(truth_ids)
    if k is None:
        k = result_ids.shape[1]
    if truth_ids.shape[0] != result_ids.shape[0]:
        raise UsageError("truth and results cover different numbers of queries")
    if truth_ids.shape[1] < k:
        raise UsageError(f"truth has {truth_ids.shape[1]} columns, need at least k={k}")
    res = result_ids[:, :k]
    tru = truth_ids[:, :k]
    hits = (res[:, :, None] == tru[:, None, :]).any(axis=2).sum(axis=1)
    return float(hits.mean() / k)


class SplitMix64:
    """Deterministic seed derivation for named sub-streams."""

    def __init__(self, seed: int):
        self.state = seed & 0xFFFFFFFFFFFFFFFF

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
        return z ^ (z >> 31)


def substream_seed(seed: int, name: str) -> int:
    """Seed for the named random sub-stream (e.g. ``"knn"``, ``"init"``)."""
    h = SplitMix64(seed)
    for ch in name.encode():
        h.state ^= ch
        h.next()
    return h.next()


@numba.njit(cache=True, inline="always")
def rng_next(state):
    """splitmix64 step on a length-1 uint64 state array; returns a uint64."""
    state[0] += np.uint64(0x9E3779B97F4A7C15)
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True, inline="always")
def rng_below(state, bound):
    return np.int64(rng_next(state) % np.uint64(bound))
