"""pgmkit command-line interface.

Exit codes: 0 ok, 1 usage, 2 I/O or format error, 3 infeasible budget.
"""
import argparse
import json
import os
import sys

import numpy as np

from . import bench, datasets, tuner
from . import index as pgm
from .errors import EpsilonError, FormatError, InfeasibleBudgetError, PGMError

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_INFEASIBLE = 0, 1, 2, 3
DEFAULT_SEED = 42
DEFAULT_DATA = "dataset.pgmd"
DEFAULT_INDEX = "index.pgmi"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def default_seed():
    raw = os.environ.get("PGM_SEED")
    if raw is None or raw == "":
        return DEFAULT_SEED
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"PGM_SEED must be an integer, got {raw!r}") from None


def _emit(args, records):
    """Print dict records as CSV (header + rows) or JSON lines."""
    out = sys.stdout
    if args.json:
        for r in records:
            out.write(json.dumps(r) + "\n")
        return
    if not records:
        return
    cols = list(dict.fromkeys(c for r in records for c in r))
    out.write(",".join(cols) + "\n")
    for r in records:
        out.write(",".join(_cell(r.get(c)) for c in cols) + "\n")


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (list, tuple)):
        return " ".join(str(x) for x in v)
    return str(v)


def _parse_key(s, dtype):
    if dtype.kind == "f":
        return float(s)
    try:
        return int(s)
    except ValueError:
        return float(s)


def _load_index(args):
    ds = datasets.load_dataset(args.data)
    return pgm.load(args.index, data=ds.keys)


# ---------------------------------------------------------------------------


def _cmd_gen(args):
    seed = args.seed if args.seed is not None else default_seed()
    params = {}
    if args.kind == "piecewise_linear":
        params = {"segments": args.segments, "noise": args.noise}
    ds = datasets.gen_dataset(args.kind, args.n, seed, payload_size=args.payload_size, **params)
    if args.text:
        datasets.write_text_keys(ds.keys, args.out)
    else:
        datasets.save_dataset(ds, args.out)
    _emit(args, [{"path": args.out, "kind": args.kind, "n": len(ds), "seed": seed,
                  "key_type": ds.key_type}])
    return EXIT_OK


def _cmd_ingest(args):
    ds = datasets.ingest(args.input)
    datasets.save_dataset(ds, args.out)
    _emit(args, [{"path": args.out, "n": len(ds), "key_type": ds.key_type,
                  "min_key": ds.keys[0].item(), "max_key": ds.keys[-1].item()}])
    return EXIT_OK


def _cmd_build(args):
    ds = datasets.load_dataset(args.data)
    idx = pgm.build(ds.keys, args.eps, args.eps_internal, args.router)
    pgm.save(idx, args.out)
    st = idx.stats()
    _emit(args, [{"path": args.out, "levels": st["levels"], "segments_per_level": st["segments_per_level"],
                  "total_segments": st["total_segments"], "bytes": st["bytes"]}])
    return EXIT_OK


def _cmd_query(args):
    idx = _load_index(args)
    if args.final_search:
        idx.final_search = args.final_search
    recs = []
    if args.range:
        lo, hi = (_parse_key(x, idx.key_dtype) for x in args.range)
        if lo > hi:
            raise UsageError("range bounds must satisfy lo <= hi")
        r = idx.range_query(lo, hi)
        recs.append({"lo_key": lo, "hi_key": hi, "start": r.start, "stop": r.stop, "count": len(r)})
    for raw in args.key or []:
        k = _parse_key(raw, idx.key_dtype)
        res = getattr(idx, args.kind)(k)
        ar = idx.approx_range(k)
        recs.append({"key": k, "kind": res.kind.value, "rank": res.rank if res.rank >= 0 else None,
                     "pos": ar.pos, "lo": ar.lo, "hi": ar.hi})
    if not recs:
        raise UsageError("query needs --key or --range")
    _emit(args, recs)
    return EXIT_OK


def _cmd_bench(args):
    seed = args.seed if args.seed is not None else default_seed()
    ds = datasets.load_dataset(args.data)
    structs = bench.build_structures(ds.keys, args.eps, args.routers, args.eps_internal, args.node_bytes,
                                     baselines=not args.no_baselines)
    wl = datasets.make_workload(ds.keys, args.queries, args.kind, args.dist, seed, args.zipf_s,
                                args.miss_ratio)
    rows = bench.run_bench(ds.keys, structs, wl, args.repetitions, args.threads)
    if args.json:
        bench.write_jsonl(rows, sys.stdout)
    else:
        bench.write_csv(rows, sys.stdout)
    return EXIT_OK


def _cmd_tune(args):
    ds = datasets.load_dataset(args.data)
    cost = tuner.load_cost_model(args.calibration) if args.calibration else tuner.CostModel()
    page = cost.page_size if cost.page_size > 1 else None
    interval = tuple(args.interval) if args.interval else None
    if args.mode == "time":
        if args.space_budget is None:
            raise UsageError("--mode time needs --space-budget")
        res = tuner.minimize_time(ds.keys, args.space_budget, args.tol or 0, interval, args.eps_internal,
                                  page_size=page)
    else:
        if args.time_budget is None:
            raise UsageError("--mode space needs --time-budget")
        timer = tuner.SyntheticTimer(ds.keys, cost, args.eps_internal) if args.synthetic else None
        res = tuner.minimize_space(ds.keys, args.time_budget, args.tol or 0.0, timer, cost, interval,
                                   eps_internal=args.eps_internal)
    if args.trace:
        res.write_trace(args.trace)
    _emit(args, [{"mode": args.mode, "epsilon": res.epsilon_star, "space_bytes": res.achieved_space,
                  "time_s": None if res.achieved_time != res.achieved_time else res.achieved_time,
                  "iterations": res.iterations, "builds": res.builds_performed}])
    return EXIT_OK


def _cmd_calibrate(args):
    c = tuner.calibrate_latency()
    cost = tuner.CostModel(page_size=args.page_size, latency_c=c)
    tuner.save_cost_model(cost, args.out)
    _emit(args, [{"path": args.out, "latency_c_ns": c * 1e9, "page_size_keys": args.page_size}])
    return EXIT_OK


def _cmd_inspect(args):
    idx = pgm.load(args.index)
    st = idx.stats()
    recs = [{"levels": st["levels"], "segments_per_level": st["segments_per_level"],
             "total_segments": st["total_segments"], "bytes": st["bytes"], "router": st["router"],
             "eps_last": st["eps_last"], "eps_internal": st["eps_internal"], "key_count": st["key_count"]}]
    _emit(args, recs)
    if args.histogram:
        hist = []
        for depth, lv in enumerate(idx.levels):
            # points covered by each segment, bucketed by powers of two
            starts = lv.predict(lv.first_keys)
            sizes = np.diff(np.append(starts, lv.n_keys))
            sizes = np.maximum(sizes, 1)
            buckets = np.floor(np.log2(sizes)).astype(int)
            for b, c in zip(*np.unique(buckets, return_counts=True)):
                hist.append({"level": depth, "covered_min": int(2**b), "covered_max": int(2 ** (b + 1) - 1),
                             "segments": int(c)})
        _emit(args, hist)
    return EXIT_OK


# ---------------------------------------------------------------------------


def make_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="emit JSON lines instead of CSV")

    p = _Parser(prog="pgmkit", description="Build, query, benchmark and tune PGM indexes.")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", parents=[common], help="generate a synthetic dataset")
    g.add_argument("--kind", required=True, choices=datasets.KINDS)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=None, help="default: $PGM_SEED or 42")
    g.add_argument("--segments", type=int, default=10)
    g.add_argument("--noise", type=int, default=0)
    g.add_argument("--payload-size", type=int, default=0)
    g.add_argument("--text", action="store_true", help="write one key per line instead of PGMD")
    g.add_argument("--out", default=DEFAULT_DATA)
    g.set_defaults(func=_cmd_gen)

    i = sub.add_parser("ingest", parents=[common], help="convert a sorted text or PGMD file")
    i.add_argument("input")
    i.add_argument("--out", default=DEFAULT_DATA)
    i.set_defaults(func=_cmd_ingest)

    b = sub.add_parser("build", parents=[common], help="build and save an index")
    b.add_argument("--data", default=DEFAULT_DATA)
    b.add_argument("--eps", type=int, default=64)
    b.add_argument("--eps-internal", type=int, default=pgm.DEFAULT_EPS_INTERNAL)
    b.add_argument("--router", choices=["binary", "multiway", "recursive"], default="recursive")
    b.add_argument("--out", default=DEFAULT_INDEX)
    b.set_defaults(func=_cmd_build)

    q = sub.add_parser("query", parents=[common], help="query a saved index")
    q.add_argument("--data", default=DEFAULT_DATA)
    q.add_argument("--index", default=DEFAULT_INDEX)
    q.add_argument("--key", action="append", help="repeatable")
    q.add_argument("--range", nargs=2, metavar=("LO", "HI"))
    q.add_argument("--kind", choices=["lookup", "predecessor", "successor"], default="lookup")
    q.add_argument("--final-search", choices=["binary", "exponential"], default=None)
    q.set_defaults(func=_cmd_query)

    be = sub.add_parser("bench", parents=[common], help="benchmark PGM variants against baselines")
    be.add_argument("--data", default=DEFAULT_DATA)
    be.add_argument("--eps", type=int, nargs="+", default=[64])
    be.add_argument("--eps-internal", type=int, default=pgm.DEFAULT_EPS_INTERNAL)
    be.add_argument("--routers", nargs="+", choices=["binary", "multiway", "recursive"], default=["recursive"])
    be.add_argument("--queries", type=int, default=1_000_000)
    be.add_argument("--kind", choices=datasets.QUERY_KINDS, default="lookup")
    be.add_argument("--dist", choices=["uniform", "zipf"], default="uniform")
    be.add_argument("--zipf-s", type=float, default=1.0)
    be.add_argument("--miss-ratio", type=float, default=0.0)
    be.add_argument("--repetitions", type=int, default=3)
    be.add_argument("--node-bytes", type=int, default=128)
    be.add_argument("--threads", type=int, default=1)
    be.add_argument("--no-baselines", action="store_true")
    be.add_argument("--seed", type=int, default=None)
    be.set_defaults(func=_cmd_bench)

    t = sub.add_parser("tune", parents=[common], help="pick epsilon under a space or time budget")
    t.add_argument("--data", default=DEFAULT_DATA)
    t.add_argument("--mode", choices=["time", "space"], required=True,
                   help="time: minimise query time under --space-budget; space: the converse")
    t.add_argument("--space-budget", type=int, help="bytes")
    t.add_argument("--time-budget", type=float, help="seconds per query")
    t.add_argument("--tol", type=float, default=None)
    t.add_argument("--interval", type=int, nargs=2, metavar=("LO", "HI"))
    t.add_argument("--eps-internal", type=int, default=pgm.DEFAULT_EPS_INTERNAL)
    t.add_argument("--calibration", help="key=value file with latency_c_ns and page_size_keys")
    t.add_argument("--synthetic", action="store_true", help="use the cost-model timer instead of measuring")
    t.add_argument("--trace", help="write the search trace as CSV")
    t.set_defaults(func=_cmd_tune)

    c = sub.add_parser("calibrate", parents=[common], help="measure latency_c and write a calibration file")
    c.add_argument("--page-size", type=int, default=1)
    c.add_argument("--out", default="pgmkit.cal")
    c.set_defaults(func=_cmd_calibrate)

    n = sub.add_parser("inspect", parents=[common], help="print index statistics")
    n.add_argument("--index", default=DEFAULT_INDEX)
    n.add_argument("--histogram", action="store_true", help="also print per-level histograms of approximate keys per segment")
    n.set_defaults(func=_cmd_inspect)
    return p


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"pgmkit: {e}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleBudgetError as e:
        print(f"pgmkit: infeasible budget: {e} (best {e.best})", file=sys.stderr)
        return EXIT_INFEASIBLE
    except EpsilonError as e:
        print(f"pgmkit: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FormatError, PGMError) as e:
        print(f"pgmkit: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
