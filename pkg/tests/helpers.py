"""Vectorised sorted-array oracle used by the index and baseline tests."""
import numpy as np

from pgmkit.index import KIND_CODES, Kind

CODE = {k: i for i, k in enumerate(KIND_CODES)}


def expected(keys, qs, qkind):
    """Kind codes and ranks for lookup (0), predecessor (1) or successor (2)."""
    n = keys.shape[0]
    lb = np.searchsorted(keys, qs, side="left")
    hit = (lb < n) & (keys[np.minimum(lb, n - 1)] == qs)
    kinds = np.empty(qs.shape[0], dtype=np.int8)
    ranks = np.full(qs.shape[0], -1, dtype=np.int64)
    kinds[hit] = CODE[Kind.FOUND]
    ranks[hit] = lb[hit]
    miss = ~hit
    if qkind == 2:
        above = miss & (lb == n)
        kinds[miss & ~above] = CODE[Kind.SUCCESSOR]
        ranks[miss & ~above] = lb[miss & ~above]
        kinds[above] = CODE[Kind.ABSENT_ABOVE_MAX]
    else:
        below = miss & (lb == 0)
        kinds[miss & ~below] = CODE[Kind.PREDECESSOR]
        ranks[miss & ~below] = lb[miss & ~below] - 1
        kinds[below] = CODE[Kind.ABSENT_BELOW_MIN]
    return kinds, ranks


def expected_range(keys, los, his):
    a = np.searchsorted(keys, los, side="left")
    b = np.searchsorted(keys, his, side="right")
    return a, np.maximum(a, b)


def mixed_queries(keys, m, rng):
    """Present keys, in-gap keys and out-of-universe keys for integer or float arrays."""
    present = keys[rng.integers(0, keys.shape[0], m // 2)]
    if keys.dtype.kind == "f":
        lo, hi = float(keys[0]), float(keys[-1])
        span = max(hi - lo, 1.0)
        other = rng.uniform(lo - 0.1 * span, hi + 0.1 * span, m - m // 2)
    else:
        lo, hi = int(keys[0]), int(keys[-1])
        span = max(hi - lo, 1)
        a = max(0, lo - span // 10)
        b = min(2**64 - 1, hi + span // 10)
        other = rng.integers(a, b, m - m // 2, dtype=np.uint64, endpoint=True)
    qs = np.concatenate([present, other.astype(keys.dtype)])
    rng.shuffle(qs)
    return qs


def check_structure(struct, keys, qs):
    """Number of mismatches over the three point-query kinds and the range query."""
    bad = 0
    for qk in (0, 1, 2):
        k, r = struct.query_many(qs, qk)
        ek, er = expected(keys, qs, qk)
        bad += int(np.sum((k != ek) | (r != er)))
    his = np.sort(np.stack([qs, np.roll(qs, 1)]), axis=0)
    a, b = struct.range_many(his[0], his[1])
    ea, eb = expected_range(keys, his[0], his[1])
    bad += int(np.sum((a != ea) | ((b - a) != (eb - ea))))
    return bad
