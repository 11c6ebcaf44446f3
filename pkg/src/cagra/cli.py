"""Command-line driver: ``build``, ``metrics``, ``search`` and ``bench``.

Exit status is 0 on success, 2 for usage errors and 3 for file or format
errors.
"""

from __future__ import annotations

import argparse
import itertools
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from .core import FormatError, UsageError, exact_topk, substream_seed
from .engine import PER_QUERY, SHARED, ExecutionMode, batch_search, choose_mode, run_benchmark, write_bench_csv
from .io import load_graph, load_vecs, save_graph
from .knn import NNDescentParams, build_knn_graph, graph_recall
from .metrics import quality_report
from .optimize import format_report, optimize
from .search import SearchParams

EXIT_USAGE = 2
EXIT_FORMAT = 3

# Distance-mode reordering costs N * d_init * (d_init - 1) evaluations.
DISTANCE_MODE_WARN_EVALS = 10**8
_SEED_MASK = (1 << 63) - 1


def _search_params(args) -> SearchParams:
    return SearchParams(
        k=args.k,
        M=args.M,
        p=args.p,
        max_iterations=args.max_iterations,
        min_iterations=args.min_iterations,
        hash_policy=args.hash,
        hash_bits=args.hash_bits,
        reset_interval=args.reset_interval,
        seed=substream_seed(args.seed, "init") & _SEED_MASK,
    )


def _exec_mode(args, batch_size: int, M: int) -> ExecutionMode:
    if args.exec_mode == "auto":
        return choose_mode(batch_size, M, team_count=args.teams)
    return ExecutionMode(args.exec_mode, args.teams)


def _load_search_inputs(args):
    data = load_vecs(args.data, "float")
    graph = load_graph(args.graph)
    queries = load_vecs(args.queries, "float")
    if graph.shape[0] != data.shape[0]:
        raise UsageError(f"graph has N={graph.shape[0]} but dataset has N={data.shape[0]}")
    if queries.shape[1] != data.shape[1]:
        raise UsageError(f"queries have dimension {queries.shape[1]}, dataset has {data.shape[1]}")
    return data, graph, queries


def cmd_build(args) -> int:
    d_init = args.d_init if args.d_init is not None else 2 * args.d
    if d_init < args.d:
        raise UsageError(f"--d-init ({d_init}) must be >= --d ({args.d})")
    data = load_vecs(args.data, "float")
    n = data.shape[0]
    if d_init >= n:
        raise UsageError(f"--d-init ({d_init}) must be < N ({n})")
    if args.mode == "distance" and n * d_init * (d_init - 1) >= DISTANCE_MODE_WARN_EVALS:
        warnings.warn(
            f"distance-based reordering needs about {n * d_init * (d_init - 1):.2e} distance computations;"
            " rank mode avoids them",
            RuntimeWarning,
            stacklevel=1,
        )
    nnd = NNDescentParams(seed=substream_seed(args.seed, "knn") & _SEED_MASK)
    t0 = time.perf_counter()
    knn = build_knn_graph(data, d_init, args.knn.replace("-", "_"), nnd)
    t_knn = time.perf_counter() - t0
    graph, stats = optimize(knn, args.d, args.mode, data if args.mode == "distance" else None, return_stats=True)
    save_graph(graph, args.out)

    report = {"knn_builder": knn.stats.get("builder"), "time_knn": t_knn}
    if knn.stats.get("builder") == "nn_descent":
        report["knn_rounds"] = knn.stats["rounds"]
        report["knn_converged"] = knn.stats["converged"]
        sample = np.random.default_rng(0).choice(n, size=min(n, 256), replace=False)
        exact_ids, _ = exact_topk(data, data[sample], d_init + 1)
        truth = np.array([[j for j in row if j != i][:d_init] for i, row in zip(sample, exact_ids)])
        report["knn_recall_sampled"] = graph_recall(knn.ids[sample], truth)
    report.update(stats)
    report["out"] = str(args.out)
    print(format_report(report))
    return 0


def cmd_metrics(args) -> int:
    graph = load_graph(args.graph)
    print(quality_report(graph).to_lines())
    return 0


def cmd_search(args) -> int:
    data, graph, queries = _load_search_inputs(args)
    if args.query_index is not None:
        if not 0 <= args.query_index < queries.shape[0]:
            raise UsageError(f"--query-index {args.query_index} out of range")
        first = args.query_index
        queries = queries[first : first + 1]
    else:
        first = 0
    params = _search_params(args)
    mode = _exec_mode(args, queries.shape[0], params.M)
    res = batch_search(graph, data, queries, params, mode, args.workers)
    for i in range(len(res)):
        ids = ",".join(str(v) for v in res.ids[i])
        dists = ",".join(f"{v:.6g}" for v in res.dists[i])
        print(f"query={first + i} ids={ids} dists={dists}")
    return 0


def _parse_grid(specs: list[str]) -> list[dict]:
    axes = {}
    for text in specs:
        for part in text.split(";"):
            if not part.strip():
                continue
            key, sep, values = part.partition("=")
            key = key.strip()
            if not sep or key not in ("M", "p", "k", "max_iterations", "reset_interval", "hash_bits"):
                raise UsageError(f"bad grid axis {part!r}; expected e.g. M=16,32,64")
            try:
                axes[key] = [int(v) for v in values.split(",") if v.strip()]
            except ValueError as exc:
                raise UsageError(f"bad grid values in {part!r}") from exc
    if not axes:
        return [{}]
    keys = list(axes)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(axes[k] for k in keys))]


def cmd_bench(args) -> int:
    data, graph, queries = _load_search_inputs(args)
    truth = load_vecs(args.truth, "int")
    base = _search_params(args)
    grid = _parse_grid(args.grid or [])
    # Validate every point before timing anything.
    points = [SearchParams(**{**base.__dict__, **point}) for point in grid]
    mode = "auto" if args.exec_mode == "auto" else ExecutionMode(args.exec_mode, args.teams)
    records = run_benchmark(graph, data, queries, truth, points, base=base, mode=mode,
                            dataset=args.dataset or Path(args.data).stem, workers=args.workers)
    text = write_bench_csv(records, args.out)
    if args.out is None:
        sys.stdout.write(text)
    return 0


def _add_search_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="dataset .fvecs")
    p.add_argument("--graph", required=True, help="graph file from `build`")
    p.add_argument("--queries", required=True, help="queries .fvecs")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--M", type=int, default=64, help="internal top-M size")
    p.add_argument("--p", type=int, default=1, help="parents per iteration")
    p.add_argument("--max-iterations", type=int, default=None)
    p.add_argument("--min-iterations", type=int, default=1)
    p.add_argument("--hash", choices=("standard", "forgettable"), default="standard")
    p.add_argument("--hash-bits", type=int, default=None)
    p.add_argument("--reset-interval", type=int, default=1)
    p.add_argument("--exec-mode", choices=("auto", PER_QUERY, SHARED), default=PER_QUERY)
    p.add_argument("--teams", type=int, default=4, help="traversal teams per query in shared mode")
    p.add_argument("--workers", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cagra", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build", help="build and optimize a search graph")
    b.add_argument("--data", required=True)
    b.add_argument("--d", type=int, required=True, help="final out-degree")
    b.add_argument("--d-init", type=int, default=None, help="initial k-NN degree (default 2d)")
    b.add_argument("--mode", choices=("rank", "distance"), default="rank")
    b.add_argument("--knn", choices=("auto", "exact", "nn-descent"), default="auto")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_build)

    m = sub.add_parser("metrics", help="strong CC count and 2-hop node count")
    m.add_argument("--graph", required=True)
    m.set_defaults(func=cmd_metrics)

    s = sub.add_parser("search", help="search queries and print top-k")
    _add_search_flags(s)
    s.add_argument("--query-index", type=int, default=None, help="search only this query")
    s.set_defaults(func=cmd_search)

    bench = sub.add_parser("bench", help="recall/QPS sweep written as CSV")
    _add_search_flags(bench)
    bench.add_argument("--truth", required=True, help="ground-truth .ivecs")
    bench.add_argument("--grid", action="append", help="axis such as M=16,32,64 (repeatable)")
    bench.add_argument("--dataset", default=None)
    bench.add_argument("--out", default=None, help="CSV path (default stdout)")
    bench.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.seed < 0:
        parser.error("--seed must be non-negative")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"cagra {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as exc:
        print(f"cagra {args.command}: format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except OSError as exc:
        print(f"cagra {args.command}: I/O error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
