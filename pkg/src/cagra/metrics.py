"""Reachability metrics for fixed-degree graphs.

Graphs are (N, d) integer arrays; negative entries are padding and ignored.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numba
import numpy as np

from .core import UsageError


@dataclass(frozen=True)
class GraphQualityReport:
    N: int
    degree: int
    strong_cc: int
    avg_2hop: float
    max_2hop: int

    def to_lines(self) -> str:
        return "\n".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in asdict(self).items())


@numba.njit(cache=True)
def _tarjan(adj):
    # Iterative Tarjan; the explicit call stack holds (node, next edge slot).
    n, deg = adj.shape
    index = np.full(n, -1, dtype=np.int64)
    low = np.zeros(n, dtype=np.int64)
    on_stack = np.zeros(n, dtype=np.bool_)
    stack = np.empty(n, dtype=np.int64)
    call_node = np.empty(n, dtype=np.int64)
    call_edge = np.empty(n, dtype=np.int64)
    sp = 0
    counter = 0
    n_comp = 0
    for root in range(n):
        if index[root] >= 0:
            continue
        top = 0
        call_node[0] = root
        call_edge[0] = 0
        index[root] = counter
        low[root] = counter
        counter += 1
        stack[sp] = root
        sp += 1
        on_stack[root] = True
        while top >= 0:
            v = call_node[top]
            e = call_edge[top]
            if e < deg:
                call_edge[top] = e + 1
                w = adj[v, e]
                if w < 0:
                    continue
                if index[w] < 0:
                    index[w] = counter
                    low[w] = counter
                    counter += 1
                    stack[sp] = w
                    sp += 1
                    on_stack[w] = True
                    top += 1
                    call_node[top] = w
                    call_edge[top] = 0
                elif on_stack[w] and index[w] < low[v]:
                    low[v] = index[w]
                continue
            if low[v] == index[v]:
                while True:
                    sp -= 1
                    w = stack[sp]
                    on_stack[w] = False
                    if w == v:
                        break
                n_comp += 1
            top -= 1
            if top >= 0:
                parent = call_node[top]
                if low[v] < low[parent]:
                    low[parent] = low[v]
    return n_comp


@numba.njit(cache=True, parallel=True)
def _two_hop_counts(adj):
    n, deg = adj.shape
    counts = np.zeros(n, dtype=np.int64)
    chunk = 1024
    n_chunks = (n + chunk - 1) // chunk
    for c in numba.prange(n_chunks):
        # Stamping with the source id avoids clearing the marker array.
        mark = np.full(n, -1, dtype=np.int64)
        for v in range(c * chunk, min((c + 1) * chunk, n)):
            mark[v] = v
            total = 0
            for i in range(deg):
                u = adj[v, i]
                if u < 0:
                    continue
                if mark[u] != v:
                    mark[u] = v
                    total += 1
                for j in range(deg):
                    w = adj[u, j]
                    if w >= 0 and mark[w] != v:
                        mark[w] = v
                        total += 1
            counts[v] = total
    return counts


def _as_adjacency(graph) -> np.ndarray:
    adj = np.ascontiguousarray(graph, dtype=np.int64)
    if adj.ndim != 2:
        raise UsageError(f"graph must be 2-D, got shape {adj.shape}")
    if adj.size and adj.max() >= adj.shape[0]:
        raise UsageError("graph ids must be < N")
    return adj


def strong_cc_count(graph) -> int:
    """Number of strongly connected components."""
    return int(_tarjan(_as_adjacency(graph)))


def two_hop_counts(graph) -> np.ndarray:
    """Per node, the number of distinct other nodes reachable in one or two hops."""
    return _two_hop_counts(_as_adjacency(graph))


def avg_2hop_count(graph) -> float:
    return float(two_hop_counts(graph).mean())


def quality_report(graph) -> GraphQualityReport:
    adj = _as_adjacency(graph)
    d = adj.shape[1]
    return GraphQualityReport(
        N=adj.shape[0],
        degree=d,
        strong_cc=int(_tarjan(adj)),
        avg_2hop=float(_two_hop_counts(adj).mean()),
        max_2hop=d + d * d,
    )
