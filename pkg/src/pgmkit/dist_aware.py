"""Distribution-aware PGM-index.

Each key tolerates a vertical error of ``min(1/p, eps)``, so popular keys get
tight segments and are found after a few probes of an exponential search that
starts at the predicted position. The per-key ranges are not stored: the
search discovers them.
"""
import math
from dataclasses import dataclass

import numba
import numpy as np

from .errors import EpsilonError, InvalidProbabilityError, UnsortedInputError
from .index import KIND_CODES, PGMIndex, QueryResult, Router
from .keys import as_keys, as_query
from .pla import _signed_delta, build_weighted_pla, floor_clamp

PROB_SUM_TOL = 1e-9


@dataclass(frozen=True)
class QueryDistribution:
    keys: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        keys = as_keys(self.keys)
        if keys.shape[0] > 1 and not np.all(keys[1:] > keys[:-1]):
            raise UnsortedInputError("weighted keys must be strictly increasing")
        probs = np.ascontiguousarray(self.probs, dtype=np.float64)
        if probs.shape != keys.shape:
            raise InvalidProbabilityError("one probability per key is required")
        if not np.all(np.isfinite(probs)) or not np.all(probs > 0) or np.any(probs > 1):
            raise InvalidProbabilityError("each p must lie in (0, 1]")
        if abs(math.fsum(probs) - 1.0) > PROB_SUM_TOL:
            raise InvalidProbabilityError(f"probabilities sum to {math.fsum(probs)!r}")
        object.__setattr__(self, "keys", keys)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_weights(cls, keys, weights):
        """Normalise non-negative weights; zero weights are rejected."""
        w = np.asarray(weights, dtype=np.float64)
        if w.size == 0 or not np.all(np.isfinite(w)) or not np.all(w > 0):
            raise InvalidProbabilityError("weights must be positive and finite")
        return cls(keys, w / w.sum())

    @classmethod
    def uniform(cls, keys):
        keys = as_keys(keys)
        return cls(keys, np.full(keys.shape[0], 1.0 / keys.shape[0]))

    @property
    def entropy(self):
        return entropy(self)

    def __len__(self):
        return self.keys.shape[0]


def entropy(dist):
    """Shannon entropy of the distribution in bits."""
    p = dist.probs
    return max(0.0, float(-np.sum(p * np.log2(p))))


def smooth(weights):
    """Replace zero weights by 1/n**2 (relative to the total) and renormalise."""
    w = np.asarray(weights, dtype=np.float64)
    w = w / w.sum()
    n = w.shape[0]
    w = np.maximum(w, 1.0 / (n * n))
    return w / w.sum()


def _segment_meta(first_keys, xs, mass):
    """Total mass and heaviest covered point of each segment."""
    starts = np.searchsorted(xs, first_keys, side="left")
    return np.add.reduceat(mass, starts), np.maximum.reduceat(mass, starts)


def build_distribution_aware(dist, epsilon):
    """Weighted recursive index: every point tolerates ``min(P/q, epsilon)``.

    At the leaf a point is a key and ``P/q`` is ``1/p``. Above it a point is a
    segment, ``P`` its total mass and ``q`` the mass of its heaviest child.
    """
    if isinstance(epsilon, bool) or not isinstance(epsilon, (int, np.integer)) or epsilon < 1:
        raise EpsilonError(epsilon)
    eps = int(epsilon)
    xs = dist.keys
    mass = dist.probs
    ratio = 1.0 / dist.probs
    levels = []
    while True:
        ys = np.arange(xs.shape[0], dtype=np.float64)
        model = build_weighted_pla(xs, ys, np.minimum(ratio, float(eps)), n_keys=xs.shape[0])
        # report the nominal epsilon even when every band is narrower
        levels.append(type(model)(model.first_keys, model.slopes, model.intercepts, eps, model.n_keys))
        if len(model) == 1 and len(levels) >= 2:
            break
        cum, mx = _segment_meta(model.first_keys, xs, mass)
        xs, mass, ratio = model.first_keys, cum, cum / mx
    levels.reverse()
    return PGMIndex(levels, eps, eps, Router.WEIGHTED, dist.keys.shape[0], data=dist.keys)


def band_errors(idx, dist):
    """Pre-floor leaf prediction error ``f(k_i) - i`` for every weighted key."""
    leaf = idx.levels[-1]
    seg = np.searchsorted(leaf.first_keys, dist.keys, side="right") - 1
    seg = np.maximum(seg, 0)
    delta = dist.keys.astype(np.float64) - leaf.first_keys[seg].astype(np.float64)
    if dist.keys.dtype.kind == "u":
        delta = (dist.keys - leaf.first_keys[seg]).astype(np.float64)
    return leaf.slopes[seg] * delta + leaf.intercepts[seg] - np.arange(len(dist), dtype=np.float64)


# ---------------------------------------------------------------------------


@numba.njit(cache=True, nogil=True)
def _counted_lower_bound(arr, lo, hi, q):
    probes = 0
    while lo < hi:
        mid = (lo + hi) >> 1
        probes += 1
        if arr[mid] < q:
            lo = mid + 1
        else:
            hi = mid
    return lo, probes


@numba.njit(cache=True, nogil=True)
def _exp_search(arr, base, end, pos, q):
    """Lower bound of q in arr[base:end] by galloping outward from ``pos``."""
    probes = 1
    if arr[pos] < q:
        lo = pos + 1
        step = 1
        while True:
            hi = pos + step
            if hi >= end:
                hi = end
                break
            probes += 1
            if arr[hi] >= q:
                break
            lo = hi + 1
            step *= 2
    else:
        hi = pos
        step = 1
        while True:
            lo = pos - step
            if lo < base:
                lo = base
                break
            probes += 1
            if arr[lo] < q:
                lo += 1
                break
            hi = lo
            step *= 2
    p, extra = _counted_lower_bound(arr, lo, hi, q)
    return p, probes + extra


@numba.njit(cache=True, nogil=True)
def _weighted_descend(fk, sl, ic, offs, data, q):
    L = offs.shape[0] - 1
    s = offs[0]
    steps = 0
    for lev in range(L - 1):
        nb = offs[lev + 1]
        ne = offs[lev + 2]
        pos = floor_clamp(sl[s] * _signed_delta(q, fk[s]) + ic[s], ne - nb - 1)
        p, st = _exp_search(fk, nb, ne, nb + pos, q)
        steps += st
        if p < ne and fk[p] == q:
            s = p
        else:
            s = p - 1
        if s < nb:
            s = nb
    n = data.shape[0]
    pos = floor_clamp(sl[s] * _signed_delta(q, fk[s]) + ic[s], n - 1)
    p, st = _exp_search(data, 0, n, pos, q)
    return p, steps + st


@numba.njit(cache=True, nogil=True)
def _weighted_batch(fk, sl, ic, offs, data, qs):
    m = qs.shape[0]
    n = data.shape[0]
    kinds = np.empty(m, dtype=np.int8)
    ranks = np.empty(m, dtype=np.int64)
    steps = np.empty(m, dtype=np.int64)
    for i in range(m):
        q = qs[i]
        p, st = _weighted_descend(fk, sl, ic, offs, data, q)
        steps[i] = st
        if p < n and data[p] == q:
            kinds[i] = 0
            ranks[i] = p
        elif p == 0:
            kinds[i] = 3
            ranks[i] = -1
        else:
            kinds[i] = 1
            ranks[i] = p - 1
    return kinds, ranks, steps


def weighted_lookup_many(idx, qs):
    """Batch weighted lookup: (kind codes, ranks, probe counts)."""
    data = idx._need_data()
    qs = np.ascontiguousarray(qs, dtype=idx.key_dtype)
    return _weighted_batch(idx._fk, idx._sl, idx._ic, idx._offs, data, qs)


def weighted_lookup(idx, k):
    """Lookup by exponential search at every level; returns (QueryResult, probes)."""
    v, side = as_query(k, idx.key_dtype)
    if side < 0:
        return QueryResult(KIND_CODES[3]), 0
    if side > 0:
        return QueryResult(KIND_CODES[1], idx.key_count - 1), 0
    kinds, ranks, steps = weighted_lookup_many(idx, np.array([v], dtype=idx.key_dtype))
    return QueryResult(KIND_CODES[kinds[0]], int(ranks[0])), int(steps[0])


# ---------------------------------------------------------------------------
# text format


def load_weighted_text(path):
    """Read ``key<TAB>weight`` lines (sorted by key) into a QueryDistribution."""
    keys, weights = [], []
    with open(path) as fp:
        for lineno, line in enumerate(fp, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"line {lineno}: expected key<TAB>weight")
            keys.append(_parse_key(parts[0]))
            weights.append(float(parts[1]))
    return QueryDistribution.from_weights(np.array(keys), np.array(weights))


def _parse_key(s):
    try:
        return int(s)
    except ValueError:
        return float(s)


def save_weighted_text(dist, path):
    with open(path, "w") as fp:
        for k, p in zip(dist.keys.tolist(), dist.probs.tolist()):
            fp.write(f"{k}\t{p!r}\n")
