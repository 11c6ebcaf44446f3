"""Batch search orchestration and recall/throughput measurement.

Two execution strategies share the traversal kernels:

* ``per_query_worker``: one full traversal per query, queries spread over
  the worker pool. Suited to large batches.
* ``shared_query_workers``: several traversal teams per query, each
  expanding one parent per iteration into its own top-M list while sharing
  one visited table; the final answer is the top-k of the union of the
  teams' lists. Suited to small batches or large M.
"""

from __future__ import annotations

import csv
import dataclasses
import io as _io
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass

import numba
import numpy as np

from .core import INDEX_MASK, UsageError, as_dataset, as_queries, batch_recall
from .search import (
    _NO_TRACE,
    DUMMY_ID,
    EMPTY_SLOT,
    INF,
    SearchParams,
    SearchResult,
    _check_graph,
    expand,
    init_sample,
    query_state,
    search_kernel,
    select_parents,
    update_topm,
)

PER_QUERY = "per_query_worker"
SHARED = "shared_query_workers"
DEFAULT_M_THRESHOLD = 512
CSV_COLUMNS = ("dataset", "mode", "M", "p", "d", "k", "iterations", "recall", "qps")


@dataclass(frozen=True)
class ExecutionMode:
    mode: str = PER_QUERY
    team_count: int = 4

    def __post_init__(self):
        if self.mode not in (PER_QUERY, SHARED):
            raise UsageError(f"unknown execution mode {self.mode!r}")
        if self.mode == SHARED and self.team_count < 2:
            raise UsageError("shared mode needs team_count >= 2")


def default_batch_threshold() -> int:
    # At least 2: a lone query is always a small batch, even on one core.
    return max(2, numba.config.NUMBA_NUM_THREADS or os.cpu_count() or 1)


def choose_mode(batch_size: int, M: int, b_T: int | None = None, M_T: int = DEFAULT_M_THRESHOLD,
                team_count: int = 4) -> ExecutionMode:
    """Shared teams for small batches or large top-M lists, else one worker per query."""
    if b_T is None:
        b_T = default_batch_threshold()
    if b_T <= 0 or M_T <= 0:
        raise UsageError("thresholds must be positive")
    if batch_size < b_T or M > M_T:
        return ExecutionMode(SHARED, team_count)
    return ExecutionMode(PER_QUERY, team_count)


@dataclass
class BatchResult:
    ids: np.ndarray
    dists: np.ndarray
    iterations: np.ndarray
    distance_evals: np.ndarray
    hash_resets: np.ndarray
    mode: ExecutionMode

    def __len__(self) -> int:
        return self.ids.shape[0]

    def __getitem__(self, i: int) -> SearchResult:
        return SearchResult(
            self.ids[i], self.dists[i], int(self.iterations[i]),
            int(self.distance_evals[i]), int(self.hash_resets[i]),
        )


@numba.njit(cache=True, parallel=True)
def _batch_per_query(graph, data, queries, k, M, p, max_iter, min_iter, forgettable, bits, reset_interval, seed):
    nq = queries.shape[0]
    out_ids = np.empty((nq, k), dtype=np.int64)
    out_d = np.empty((nq, k), dtype=np.float32)
    stats = np.zeros((nq, 4), dtype=np.int64)
    for qi in numba.prange(nq):
        ids, dists, it, ev, rs, _, st = search_kernel(
            graph, data, queries[qi], M, p, max_iter, min_iter, forgettable, bits, reset_interval,
            query_state(seed, 0), np.empty(0, dtype=np.int64),
        )
        for t in range(k):
            out_ids[qi, t] = np.int64(ids[t] & INDEX_MASK)
            out_d[qi, t] = dists[t]
        stats[qi, 0] = it
        stats[qi, 1] = ev
        stats[qi, 2] = rs
        stats[qi, 3] = st
    return out_ids, out_d, stats


@numba.njit(cache=True)
def shared_kernel(graph, data, q, k, M, teams, max_iter, bits, seed, trace):
    """Teams of one parent each, sharing a standard visited table."""
    d = graph.shape[1]
    ids = np.empty((teams, M + d), dtype=np.uint32)
    dists = np.empty((teams, M + d), dtype=np.float32)
    slots = np.full(1 << bits, EMPTY_SLOT, dtype=np.uint32)
    tstate = np.zeros(1, dtype=np.int64)
    counters = np.zeros(3, dtype=np.int64)
    parent = np.empty(1, dtype=np.uint32)
    for t in range(teams):
        init_sample(data, q, ids[t], dists[t], M, slots, tstate, query_state(seed, t), counters, trace)
    it = 0
    status = 0
    while True:
        for t in range(teams):
            update_topm(ids[t], dists[t], M)
        if it >= max_iter:
            break
        active = 0
        for t in range(teams):
            n_par = select_parents(ids[t], dists[t], M, 1, parent)
            active += n_par
            if expand(graph, data, q, parent, n_par, ids[t], dists[t], M, slots, tstate, False, counters, trace) < 0:
                status = -1
        if active == 0 or status < 0:
            break
        it += 1

    bits_view = dists.reshape(-1).view(np.uint32)
    flat_ids = ids.reshape(-1)
    flat_d = dists.reshape(-1)
    keys = np.empty(teams * M, dtype=np.uint64)
    where = np.empty(teams * M, dtype=np.int64)
    m = 0
    for t in range(teams):
        for i in range(M):
            s = t * (M + d) + i
            if flat_d[s] < INF:
                keys[m] = (np.uint64(bits_view[s]) << np.uint64(32)) | np.uint64(flat_ids[s] & INDEX_MASK)
                where[m] = s
                m += 1
    order = np.argsort(keys[:m], kind="mergesort")
    out_ids = np.full(k, np.int64(DUMMY_ID), dtype=np.int64)
    out_d = np.full(k, INF, dtype=np.float32)
    o = 0
    last = np.uint64(0xFFFFFFFFFFFFFFFF)
    for j in range(m):
        if o == k:
            break
        key = keys[order[j]]
        if key == last:
            continue
        last = key
        s = where[order[j]]
        out_ids[o] = np.int64(flat_ids[s] & INDEX_MASK)
        out_d[o] = flat_d[s]
        o += 1
    return out_ids, out_d, it, counters[0], counters[2], status


@numba.njit(cache=True, parallel=True)
def _batch_shared(graph, data, queries, k, M, teams, max_iter, bits, seed):
    nq = queries.shape[0]
    out_ids = np.empty((nq, k), dtype=np.int64)
    out_d = np.empty((nq, k), dtype=np.float32)
    stats = np.zeros((nq, 4), dtype=np.int64)
    for qi in numba.prange(nq):
        ids, dists, it, ev, _, st = shared_kernel(
            graph, data, queries[qi], k, M, teams, max_iter, bits, seed, np.empty(0, dtype=np.int64)
        )
        out_ids[qi] = ids
        out_d[qi] = dists
        stats[qi, 0] = it
        stats[qi, 1] = ev
        stats[qi, 3] = st
    return out_ids, out_d, stats


@contextmanager
def worker_count(workers: int | None):
    """Temporarily set the numba thread pool size."""
    if workers is None:
        yield
        return
    previous = numba.get_num_threads()
    numba.set_num_threads(max(1, min(workers, numba.config.NUMBA_NUM_THREADS)))
    try:
        yield
    finally:
        numba.set_num_threads(previous)


def shared_params(params: SearchParams) -> SearchParams:
    """Per-team settings in shared mode: one parent per team, standard table."""
    limit = params.max_iterations
    if limit is None:
        limit = dataclasses.replace(params, p=1).iteration_limit
    return dataclasses.replace(params, p=1, hash_policy="standard", hash_bits=None, max_iterations=limit)


def batch_search(graph, data, queries, params: SearchParams, mode: ExecutionMode | None = None,
                 workers: int | None = None) -> BatchResult:
    x = as_dataset(data)
    g = _check_graph(graph, x.shape[0])
    if mode is None:
        mode = ExecutionMode(PER_QUERY)
    if params.k > x.shape[0]:
        raise UsageError(f"k={params.k} exceeds N={x.shape[0]}")
    if np.ndim(queries) == 2 and np.shape(queries)[0] == 0:
        if np.shape(queries)[1] != x.shape[1]:
            raise UsageError(f"queries must have dimension {x.shape[1]}")
        k = params.k
        empty = np.empty((0, k))
        return BatchResult(empty.astype(np.int64), empty.astype(np.float32), *(np.empty(0, np.int64),) * 3, mode)
    q = as_queries(queries, x.shape[1])
    with worker_count(workers):
        if mode.mode == PER_QUERY:
            bits = params.table_bits(g.shape[1], x.shape[0])
            ids, dists, stats = _batch_per_query(
                g, x, q, params.k, params.M, params.p, params.iteration_limit, params.min_iterations,
                params.hash_policy == "forgettable", bits, params.reset_interval, params.seed,
            )
        else:
            sp = shared_params(params)
            bits = sp.table_bits(g.shape[1], x.shape[0], parents=mode.team_count)
            ids, dists, stats = _batch_shared(
                g, x, q, params.k, params.M, mode.team_count, sp.iteration_limit, bits, params.seed,
            )
    if (stats[:, 3] < 0).any():
        raise RuntimeError("visited table overflow under the standard policy")
    return BatchResult(ids, dists, stats[:, 0], stats[:, 1], stats[:, 2], mode)


def search_shared(graph, data, q, params: SearchParams, team_count: int = 4, *, trace: bool = False) -> SearchResult:
    """One query in shared mode; ``trace`` records every evaluated id."""
    x = as_dataset(data)
    g = _check_graph(graph, x.shape[0])
    qv = as_queries(q, x.shape[1])[0]
    mode = ExecutionMode(SHARED, team_count)
    sp = shared_params(params)
    bits = sp.table_bits(g.shape[1], x.shape[0], parents=mode.team_count)
    buf = np.empty((sp.iteration_limit + 1) * team_count * g.shape[1], dtype=np.int64) if trace else _NO_TRACE
    ids, dists, it, ev, n_trace, st = shared_kernel(g, x, qv, params.k, params.M, team_count, sp.iteration_limit,
                                                    bits, params.seed, buf)
    if st < 0:
        raise RuntimeError("visited table overflow under the standard policy")
    return SearchResult(ids, dists, int(it), int(ev), 0, buf[:n_trace].copy() if trace else None)


@dataclass
class BenchRecord:
    dataset: str
    mode: str
    M: int
    p: int
    d: int
    k: int
    iterations: int
    recall: float
    qps: float
    mean_iterations: float = 0.0
    mean_distance_evals: float = 0.0

    def csv_row(self) -> list:
        return [self.dataset, self.mode, self.M, self.p, self.d, self.k, self.iterations,
                f"{self.recall:.6f}", f"{self.qps:.3f}"]


def _as_params(point, base: SearchParams) -> SearchParams:
    if isinstance(point, SearchParams):
        return point
    return dataclasses.replace(base, **dict(point))


def run_benchmark(graph, data, queries, truth, param_grid, *, base: SearchParams | None = None,
                  mode: ExecutionMode | str | None = "auto", dataset: str = "", workers: int | None = None,
                  warmup: bool = True) -> list[BenchRecord]:
    """One record per grid point: mean recall@k against ``truth`` and batch QPS.

    Grid points are :class:`SearchParams` or mappings of overrides applied to
    ``base``. ``mode="auto"`` picks the execution mode per point with
    :func:`choose_mode`. Each point gets one untimed warm-up pass.
    """
    x = as_dataset(data)
    q = np.asarray(queries, dtype=np.float32)
    if q.ndim != 2 or q.shape[0] == 0:
        raise UsageError("benchmark needs at least one query")
    q = as_queries(q, x.shape[1])
    if truth is None:
        raise UsageError("benchmark needs ground truth")
    truth = np.asarray(truth)
    if truth.ndim != 2 or truth.shape[0] != q.shape[0]:
        raise UsageError(f"truth must have one row per query, got shape {truth.shape}")
    base = base or SearchParams()
    g = np.asarray(graph)
    records = []
    for point in param_grid:
        params = _as_params(point, base)
        if truth.shape[1] < params.k:
            raise UsageError(f"truth has {truth.shape[1]} columns, fewer than k={params.k}")
        if mode == "auto" or mode is None:
            point_mode = choose_mode(q.shape[0], params.M)
        elif isinstance(mode, str):
            point_mode = ExecutionMode(mode)
        else:
            point_mode = mode
        if warmup:
            batch_search(g, x, q, params, point_mode, workers)
        start = time.perf_counter()
        res = batch_search(g, x, q, params, point_mode, workers)
        elapsed = max(time.perf_counter() - start, 1e-9)
        limit = params.iteration_limit if point_mode.mode == PER_QUERY else shared_params(params).iteration_limit
        records.append(BenchRecord(
            dataset=dataset,
            mode=point_mode.mode,
            M=params.M,
            p=params.p if point_mode.mode == PER_QUERY else 1,
            d=g.shape[1],
            k=params.k,
            iterations=limit,
            recall=batch_recall(res.ids, truth, params.k),
            qps=q.shape[0] / elapsed,
            mean_iterations=float(res.iterations.mean()),
            mean_distance_evals=float(res.distance_evals.mean()),
        ))
    return records


def write_bench_csv(records, path=None) -> str:
    """Write records as CSV (to ``path`` if given) and return the text."""
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for rec in records:
        writer.writerow(rec.csv_row())
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as f:
            f.write(text)
    return text


def read_bench_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))
