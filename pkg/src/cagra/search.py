"""Single-query graph traversal over a fixed out-degree graph.

The working state is one contiguous buffer of (id, distance) pairs: the
internal top-M list followed by a candidate list of ``p * d`` slots. The top
bit of an id marks a node that has already been used as a parent. Each
iteration merges the candidates into the top-M list, picks up to ``p``
unflagged entries as parents, and writes their neighbours into the candidate
slots, computing a distance only for nodes not yet in the visited table.
The search stops when no unflagged entry is left or after ``max_iterations``.

The kernels are plain numba functions over arrays so the batch engine can
run them inside its own parallel loops; the Python wrappers below expose
each step for inspection.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np

from .core import INDEX_MASK, PARENT_FLAG, UsageError, as_dataset, as_queries, rng_below, rng_next, sqdist

DUMMY_ID = np.uint32(0x7FFFFFFF)
EMPTY_SLOT = np.uint32(0xFFFFFFFF)
INF = np.float32(np.inf)

_INSERTED = 1
_PRESENT = 0
_FULL = -1

# counters layout shared by every kernel
_EVALS, _RESETS, _TRACE_LEN = 0, 1, 2


@dataclass(frozen=True)
class SearchParams:
    k: int = 10
    M: int = 64
    p: int = 1
    max_iterations: int | None = None
    min_iterations: int = 1
    hash_policy: str = "standard"
    hash_bits: int | None = None
    reset_interval: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise UsageError(f"k must be >= 1, got {self.k}")
        if self.k > self.M:
            raise UsageError(f"k={self.k} exceeds the internal top-M size M={self.M}")
        if self.p < 1:
            raise UsageError(f"p must be >= 1, got {self.p}")
        if self.min_iterations < 0:
            raise UsageError("min_iterations must be >= 0")
        if self.max_iterations is not None and self.max_iterations < max(self.min_iterations, 1):
            raise UsageError("max_iterations must be >= max(min_iterations, 1)")
        if self.hash_policy not in ("standard", "forgettable"):
            raise UsageError(f"hash_policy must be 'standard' or 'forgettable', got {self.hash_policy!r}")
        if self.reset_interval < 1:
            raise UsageError("reset_interval must be >= 1")
        if self.hash_bits is not None and not 4 <= self.hash_bits <= 30:
            raise UsageError(f"hash_bits must be in [4, 30], got {self.hash_bits}")

    @property
    def iteration_limit(self) -> int:
        if self.max_iterations is not None:
            return self.max_iterations
        return min(max(math.ceil(2 * self.M / self.p), 16), 256)

    def table_bits(self, degree: int, n_points: int, parents: int | None = None) -> int:
        """log2 of the visited-table capacity for a graph of the given degree."""
        p = self.p if parents is None else parents
        if self.hash_policy == "standard":
            if self.hash_bits is not None:
                return self.hash_bits
            # Room for every insertion at load <= 0.5; a table never holds more than N ids.
            need = 2 * (self.iteration_limit + 1) * p * degree
            return max(4, min(_ceil_log2(need), _ceil_log2(2 * n_points)))
        need = 2 * (self.M + self.reset_interval * p * degree)
        bits = self.hash_bits if self.hash_bits is not None else min(max(_ceil_log2(need), 8), 13)
        if (1 << bits) // 2 <= self.M + p * degree:
            raise UsageError(
                f"forgettable table of 2^{bits} slots cannot hold M + p*d = {self.M + p * degree} ids"
                " at load <= 0.5; raise hash_bits"
            )
        return bits


def _ceil_log2(x: int) -> int:
    return max(0, int(x - 1).bit_length())


@dataclass
class SearchResult:
    ids: np.ndarray
    dists: np.ndarray
    iterations: int = 0
    distance_evals: int = 0
    hash_resets: int = 0
    evaluated: np.ndarray | None = field(default=None, repr=False)


# --------------------------------------------------------------------------
# visited table


@numba.njit(cache=True, inline="always")
def _hash(key, mask):
    return np.int64(((np.uint64(key) * np.uint64(0x9E3779B97F4A7C15)) >> np.uint64(32)) & np.uint64(mask))


@numba.njit(cache=True)
def table_insert(slots, tstate, key):
    """Insert-if-absent with linear probing; fails with _FULL past load 0.5."""
    mask = slots.shape[0] - 1
    h = _hash(key, mask)
    while True:
        s = slots[h]
        if s == EMPTY_SLOT:
            if 2 * (tstate[0] + 1) > slots.shape[0]:
                return _FULL
            slots[h] = np.uint32(key)
            tstate[0] += 1
            return _INSERTED
        if s == key:
            return _PRESENT
        h = (h + 1) & mask


@numba.njit(cache=True)
def table_contains(slots, key):
    mask = slots.shape[0] - 1
    h = _hash(key, mask)
    while True:
        s = slots[h]
        if s == EMPTY_SLOT:
            return False
        if s == key:
            return True
        h = (h + 1) & mask


@numba.njit(cache=True)
def table_reset(slots, tstate, ids, dists, M):
    """Forget everything, then register the ids currently in the top-M list."""
    slots[:] = EMPTY_SLOT
    tstate[0] = 0
    for i in range(M):
        if dists[i] == INF:
            break
        table_insert(slots, tstate, ids[i] & INDEX_MASK)


# --------------------------------------------------------------------------
# search steps


@numba.njit(cache=True)
def init_sample(data, q, ids, dists, M, slots, tstate, state, counters, trace):
    """Random sampling: fill candidates with uniformly drawn ids, top-M with dummies."""
    n = data.shape[0]
    for i in range(M):
        ids[i] = DUMMY_ID
        dists[i] = INF
    for s in range(M, ids.shape[0]):
        v = rng_below(state, n)
        ids[s] = np.uint32(v)
        if table_insert(slots, tstate, v) == _INSERTED:
            dists[s] = sqdist(q, data[v])
            _record(counters, trace, v)
        else:
            dists[s] = INF


@numba.njit(cache=True, inline="always")
def _record(counters, trace, v):
    counters[_EVALS] += 1
    t = counters[_TRACE_LEN]
    if t < trace.shape[0]:
        trace[t] = v
        counters[_TRACE_LEN] = t + 1


@numba.njit(cache=True)
def update_topm(ids, dists, M):
    """Merge the candidate list into the sorted top-M list in place.

    Equivalent to sorting the whole buffer by (distance, id), dropping +inf
    slots, collapsing repeated ids (keeping the parent flag) and keeping M.
    """
    bits = dists.view(np.uint32)
    n_cand = ids.shape[0] - M
    keys = np.empty(n_cand, dtype=np.uint64)
    where = np.empty(n_cand, dtype=np.int64)
    m = 0
    for i in range(n_cand):
        s = M + i
        if dists[s] < INF:
            keys[m] = (np.uint64(bits[s]) << np.uint64(32)) | np.uint64(ids[s] & INDEX_MASK)
            where[m] = s
            m += 1
    order = np.argsort(keys[:m], kind="mergesort")
    out_i = np.empty(M, dtype=np.uint32)
    out_d = np.empty(M, dtype=np.float32)
    a = 0
    b = 0
    o = 0
    last = np.int64(-1)
    # Runs past o == M only to absorb trailing duplicates of the last kept id.
    while True:
        a_ok = a < M and dists[a] < INF
        b_ok = b < m
        if not a_ok and not b_ok:
            break
        take_a = a_ok
        if a_ok and b_ok:
            key_a = (np.uint64(bits[a]) << np.uint64(32)) | np.uint64(ids[a] & INDEX_MASK)
            take_a = key_a <= keys[order[b]]
        if take_a:
            v = ids[a]
            dv = dists[a]
            a += 1
        else:
            s = where[order[b]]
            v = ids[s]
            dv = dists[s]
            b += 1
        if np.int64(v & INDEX_MASK) == last:
            out_i[o - 1] |= v & PARENT_FLAG
            continue
        if o == M:
            break
        last = np.int64(v & INDEX_MASK)
        out_i[o] = v
        out_d[o] = dv
        o += 1
    for i in range(o, M):
        out_i[i] = DUMMY_ID
        out_d[i] = INF
    ids[:M] = out_i
    dists[:M] = out_d


@numba.njit(cache=True)
def select_parents(ids, dists, M, p, out):
    """Flag and return (in ``out``) the first ``p`` top-M entries not yet parents."""
    c = 0
    for i in range(M):
        if c == p or dists[i] == INF:
            break
        if ids[i] & PARENT_FLAG == 0:
            out[c] = ids[i]
            ids[i] |= PARENT_FLAG
            c += 1
    return c


@numba.njit(cache=True)
def expand(graph, data, q, parents, n_par, ids, dists, M, slots, tstate, forgettable, counters, trace):
    """Write the parents' neighbours into the candidate slots.

    A distance is computed only when the visited-table insert succeeds;
    every other slot gets +inf. Returns -1 when a standard table overflows.
    """
    d = graph.shape[1]
    n_slots = (ids.shape[0] - M) // d
    for pi in range(n_slots):
        for j in range(d):
            s = M + pi * d + j
            if pi >= n_par:
                ids[s] = DUMMY_ID
                dists[s] = INF
                continue
            v = graph[parents[pi] & INDEX_MASK, j]
            ids[s] = np.uint32(v)
            r = table_insert(slots, tstate, v)
            if r == _FULL:
                if not forgettable:
                    return -1
                table_reset(slots, tstate, ids, dists, M)
                counters[_RESETS] += 1
                r = table_insert(slots, tstate, v)
            if r == _INSERTED:
                dists[s] = sqdist(q, data[v])
                _record(counters, trace, v)
            else:
                dists[s] = INF
    return 0


@numba.njit(cache=True)
def search_kernel(graph, data, q, M, p, max_iter, min_iter, forgettable, bits, reset_interval, state, trace):
    """Run one traversal; returns (ids, dists, iterations, evals, resets, status)."""
    d = graph.shape[1]
    ids = np.empty(M + p * d, dtype=np.uint32)
    dists = np.empty(M + p * d, dtype=np.float32)
    slots = np.full(1 << bits, EMPTY_SLOT, dtype=np.uint32)
    tstate = np.zeros(1, dtype=np.int64)
    counters = np.zeros(3, dtype=np.int64)
    parents = np.empty(p, dtype=np.uint32)
    init_sample(data, q, ids, dists, M, slots, tstate, state, counters, trace)
    it = 0
    status = 0
    while True:
        update_topm(ids, dists, M)
        if it >= max_iter:
            break
        if forgettable and it > 0 and it % reset_interval == 0:
            table_reset(slots, tstate, ids, dists, M)
            counters[_RESETS] += 1
        n_par = select_parents(ids, dists, M, p, parents)
        # No unflagged entry left: the top-M ids can no longer change.
        if n_par == 0:
            break
        if expand(graph, data, q, parents, n_par, ids, dists, M, slots, tstate, forgettable, counters, trace) < 0:
            status = -1
            break
        it += 1
    return ids[:M], dists[:M], it, counters[_EVALS], counters[_RESETS], counters[_TRACE_LEN], status


@numba.njit(cache=True, inline="always")
def query_state(seed, qi):
    state = np.empty(1, dtype=np.uint64)
    state[0] = np.uint64(seed) ^ (np.uint64(qi) * np.uint64(0xD1B54A32D192ED03))
    rng_next(state)
    return state


# --------------------------------------------------------------------------
# Python-facing wrappers


class VisitedTable:
    """Open-addressing set of node ids (linear probing, load factor <= 0.5)."""

    def __init__(self, bits: int, policy: str = "standard"):
        if policy not in ("standard", "forgettable"):
            raise UsageError(f"unknown hash policy {policy!r}")
        self.policy = policy
        self.slots = np.full(1 << bits, EMPTY_SLOT, dtype=np.uint32)
        self.state = np.zeros(1, dtype=np.int64)
        self.resets = 0

    @property
    def capacity(self) -> int:
        return self.slots.shape[0]

    def __len__(self) -> int:
        return int(self.state[0])

    def __contains__(self, v) -> bool:
        return bool(table_contains(self.slots, int(v)))

    def insert(self, v) -> bool:
        r = table_insert(self.slots, self.state, int(v))
        if r == _FULL:
            raise OverflowError("visited table is full")
        return r == _INSERTED

    def ids(self) -> set[int]:
        return {int(s) for s in self.slots if s != EMPTY_SLOT}


class SearchBuffer:
    """Top-M list followed by the candidate list, as parallel id/distance arrays."""

    def __init__(self, M: int, n_candidates: int):
        self.M = M
        self.ids = np.full(M + n_candidates, DUMMY_ID, dtype=np.uint32)
        self.dists = np.full(M + n_candidates, np.inf, dtype=np.float32)

    @classmethod
    def from_lists(cls, topm, candidates, M: int | None = None):
        """Build from sequences of (id, dist) pairs; ids may carry the parent flag."""
        topm = list(topm)
        candidates = list(candidates)
        if M is None:
            M = len(topm)
        buf = cls(M, len(candidates))
        for i, (v, dv) in enumerate(topm):
            buf.ids[i] = v
            buf.dists[i] = dv
        for i, (v, dv) in enumerate(candidates):
            buf.ids[M + i] = v
            buf.dists[M + i] = dv
        return buf

    @property
    def topm_ids(self) -> np.ndarray:
        return self.ids[: self.M] & INDEX_MASK

    @property
    def topm_dists(self) -> np.ndarray:
        return self.dists[: self.M]

    @property
    def topm_flags(self) -> np.ndarray:
        return (self.ids[: self.M] & PARENT_FLAG) != 0

    @property
    def candidate_ids(self) -> np.ndarray:
        return self.ids[self.M :] & INDEX_MASK

    @property
    def candidate_dists(self) -> np.ndarray:
        return self.dists[self.M :]

    def topm(self) -> list[tuple[int, float, bool]]:
        """Real (non-dummy) top-M entries as (id, dist, is_parent)."""
        return [
            (int(v & INDEX_MASK), float(dv), bool(v & PARENT_FLAG))
            for v, dv in zip(self.ids[: self.M], self.dists[: self.M])
            if dv != np.inf
        ]


def _check_graph(graph, n_points: int) -> np.ndarray:
    g = np.ascontiguousarray(graph, dtype=np.int32)
    if g.ndim != 2 or g.shape[0] != n_points:
        raise UsageError(f"graph shape {g.shape} does not match dataset N={n_points}")
    if g.size and (g.min() < 0 or g.max() >= n_points):
        raise UsageError("graph ids must lie in [0, N)")
    return g


def new_table(params: SearchParams, degree: int, n_points: int) -> VisitedTable:
    return VisitedTable(params.table_bits(degree, n_points), params.hash_policy)


def init_random_sample(data, q, params: SearchParams, degree: int, table: VisitedTable | None = None):
    """Step 0: returns ``(buffer, table, distance_evals)``."""
    x = as_dataset(data)
    qv = as_queries(q, x.shape[1])[0]
    if table is None:
        table = new_table(params, degree, x.shape[0])
    buf = SearchBuffer(params.M, params.p * degree)
    state = query_state(params.seed, 0)
    counters = np.zeros(3, dtype=np.int64)
    init_sample(x, qv, buf.ids, buf.dists, params.M, table.slots, table.state, state, counters, _NO_TRACE)
    return buf, table, int(counters[_EVALS])


def update_topm_buffer(buf: SearchBuffer) -> SearchBuffer:
    update_topm(buf.ids, buf.dists, buf.M)
    return buf


def select_parent_ids(buf: SearchBuffer, p: int) -> np.ndarray:
    out = np.empty(p, dtype=np.uint32)
    c = select_parents(buf.ids, buf.dists, buf.M, p, out)
    return (out[:c] & INDEX_MASK).astype(np.int64)


def expand_candidates(graph, data, q, parents, buf: SearchBuffer, table: VisitedTable) -> int:
    """Steps 2-3 for the given parents; returns the number of distances computed."""
    x = as_dataset(data)
    qv = as_queries(q, x.shape[1])[0]
    g = _check_graph(graph, x.shape[0])
    parents = np.asarray(parents, dtype=np.uint32)
    p = (buf.ids.shape[0] - buf.M) // g.shape[1]
    if len(parents) > p:
        raise UsageError(f"{len(parents)} parents do not fit {p} candidate rows")
    par = np.zeros(p, dtype=np.uint32)
    par[: len(parents)] = parents
    counters = np.zeros(3, dtype=np.int64)
    status = expand(
        g, x, qv, par, len(parents), buf.ids, buf.dists, buf.M,
        table.slots, table.state, table.policy == "forgettable", counters, _NO_TRACE,
    )
    table.resets += int(counters[_RESETS])
    if status < 0:
        raise RuntimeError("visited table overflow under the standard policy")
    return int(counters[_EVALS])


def reset_table(table: VisitedTable, buf: SearchBuffer) -> None:
    """Forgettable policy only: keep exactly the ids now in the top-M list."""
    if table.policy != "forgettable":
        warnings.warn("reset_table called on a standard-policy table; ignored", RuntimeWarning, stacklevel=2)
        return
    table_reset(table.slots, table.state, buf.ids, buf.dists, buf.M)
    table.resets += 1


_NO_TRACE = np.empty(0, dtype=np.int64)


def search_one(graph, data, q, params: SearchParams, *, trace: bool = False) -> SearchResult:
    """Approximate top-k for one query.

    With ``trace=True`` the result also lists every id whose distance was
    computed, in evaluation order.
    """
    x = as_dataset(data)
    qv = as_queries(q, x.shape[1])[0]
    g = _check_graph(graph, x.shape[0])
    if params.k > x.shape[0]:
        raise UsageError(f"k={params.k} exceeds N={x.shape[0]}")
    bits = params.table_bits(g.shape[1], x.shape[0])
    limit = params.iteration_limit
    buf = np.empty((limit + 1) * params.p * g.shape[1], dtype=np.int64) if trace else _NO_TRACE
    ids, dists, it, evals, resets, n_trace, status = search_kernel(
        g, x, qv, params.M, params.p, limit, params.min_iterations,
        params.hash_policy == "forgettable", bits, params.reset_interval,
        query_state(params.seed, 0), buf,
    )
    if status < 0:
        raise RuntimeError("visited table overflow under the standard policy")
    k = params.k
    return SearchResult(
        (ids[:k] & INDEX_MASK).astype(np.int64),
        dists[:k].copy(),
        int(it),
        int(evals),
        int(resets),
        buf[:n_trace].copy() if trace else None,
    )
