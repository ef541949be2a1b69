"""Benchmark runner: build time, size, query latency and prediction error."""
import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .baselines import BinarySearchBaseline, MultiwayTreeBaseline
from .errors import PGMError
from .index import PGMIndex, build

SCHEMA = "pgmkit-bench/1"
FIELDS = ["schema", "name", "build_seconds", "bytes", "mean_ns", "p99_ns",
          "mean_absolute_error", "error_stddev", "queries", "kind"]
MINI_BATCH = 64
QKIND = {"lookup": 0, "predecessor": 1, "successor": 2}


@dataclass
class BenchRow:
    name: str
    build_seconds: float
    bytes: int
    mean_ns: float
    p99_ns: float
    mean_absolute_error: float
    error_stddev: float
    queries: int
    kind: str
    schema: str = SCHEMA


def build_structures(keys, eps_values=(64,), routers=("recursive",), eps_internal=4,
                     node_bytes=128, baselines=True):
    """Build PGM variants and baselines; returns (name, structure, build_seconds)."""
    out = []
    for eps in eps_values:
        for router in routers:
            t = time.perf_counter()
            idx = build(keys, eps, eps_internal, router)
            out.append((f"pgm_{router}_eps{eps}", idx, time.perf_counter() - t))
    if baselines:
        t = time.perf_counter()
        b = BinarySearchBaseline(keys)
        out.append(("binary_search", b, time.perf_counter() - t))
        t = time.perf_counter()
        m = MultiwayTreeBaseline(keys, node_bytes)
        out.append((f"multiway_tree_{node_bytes}B", m, time.perf_counter() - t))
    return out


def _run(struct, workload, lo, hi):
    if workload.kind == "range":
        return struct.range_many(workload.queries[lo:hi], workload.his[lo:hi])
    return struct.query_many(workload.queries[lo:hi], QKIND[workload.kind])


def _timed_pass(struct, workload, threads):
    m = workload.queries.shape[0]
    if threads <= 1:
        t = time.perf_counter()
        _run(struct, workload, 0, m)
        return time.perf_counter() - t
    bounds = np.linspace(0, m, threads + 1).astype(int)
    with ThreadPoolExecutor(threads) as pool:
        t = time.perf_counter()
        list(pool.map(lambda i: _run(struct, workload, bounds[i], bounds[i + 1]), range(threads)))
        return time.perf_counter() - t


def _p99(struct, workload):
    """99th percentile of per-query time measured over small consecutive batches."""
    m = workload.queries.shape[0]
    per = []
    for lo in range(0, m - MINI_BATCH + 1, MINI_BATCH):
        t = time.perf_counter_ns()
        _run(struct, workload, lo, lo + MINI_BATCH)
        per.append((time.perf_counter_ns() - t) / MINI_BATCH)
    return float(np.percentile(per, 99)) if per else float("nan")


def prediction_errors(idx, queries):
    """Signed leaf prediction error against the true lower-bound rank."""
    pos, _, _, _ = idx.approx_range_many(queries)
    true = np.searchsorted(idx._need_data(), queries, side="left")
    true = np.minimum(true, idx.key_count - 1)
    return pos - true


def run_bench(keys, structures, workload, repetitions=3, threads=1):
    """One row per structure; mean_ns is the median over repetitions."""
    keys = np.asarray(keys)
    if workload.queries.dtype != keys.dtype:
        raise PGMError(f"workload keys are {workload.queries.dtype}, dataset keys are {keys.dtype}")
    rows = []
    m = workload.queries.shape[0]
    for name, struct, build_s in structures:
        _run(struct, workload, 0, min(m, 16))
        times = [_timed_pass(struct, workload, threads) for _ in range(max(1, repetitions))]
        mean_ns = float(np.median(times)) / m * 1e9
        if isinstance(struct, PGMIndex):
            nbytes = struct.stats()["bytes"]
            err = np.abs(prediction_errors(struct, workload.queries))
            mae, sd = float(err.mean()), float(err.std())
        else:
            nbytes = struct.nbytes
            mae = sd = float("nan")
        rows.append(BenchRow(name, build_s, nbytes, mean_ns, _p99(struct, workload), mae, sd, m, workload.kind))
    return rows


def write_csv(rows, fp):
    w = csv.DictWriter(fp, fieldnames=FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(asdict(r))


def write_jsonl(rows, fp):
    for r in rows:
        fp.write(json.dumps(asdict(r)) + "\n")
