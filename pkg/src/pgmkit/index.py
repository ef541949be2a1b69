"""PGM-index: PLA levels plus a router that finds the responsible segment.

Three routers are supported:

* ``BINARY``    one PLA level, segment found by binary search on first keys;
* ``MULTIWAY``  one PLA level, segment found through a static multiway tree;
* ``RECURSIVE`` PLA levels stacked until a single root segment remains.

Every search below resolves a *lower bound*: the first position whose key is
``>= q``. Windows produced by the models are guaranteed to contain it for
distinct keys; the resolver still checks both borders and gallops outward when
a border fails (possible only around long runs of duplicates), so answers are
always exact.
"""
import io
import struct
from dataclasses import dataclass
from enum import Enum, IntEnum

import numba
import numpy as np

from .errors import BadMagicError, EpsilonError, FormatError, TruncatedError, VersionError
from .keys import KEY_F64, KEY_U64, as_keys, as_query, key_dtype, key_tag
from .pla import PLAModel, _signed_delta, build_optimal_pla, floor_clamp

MAGIC = b"PGMI"
VERSION = 1
HEADER = struct.Struct("<4sHBBIIQH")
LEVEL_HEADER = struct.Struct("<Q")
SEGMENT_BYTES = 24

DEFAULT_EPS_INTERNAL = 4


class Router(IntEnum):
    BINARY = 0
    MULTIWAY = 1
    RECURSIVE = 2
    WEIGHTED = 3


class Kind(str, Enum):
    FOUND = "found"
    PREDECESSOR = "predecessor"
    SUCCESSOR = "successor"
    ABSENT_BELOW_MIN = "absent_below_min"
    ABSENT_ABOVE_MAX = "absent_above_max"


# integer codes used by the batch kernels, in Kind order
KIND_CODES = list(Kind)
Q_LOOKUP, Q_PREDECESSOR, Q_SUCCESSOR = 0, 1, 2


@dataclass(frozen=True)
class ApproxRange:
    pos: int
    lo: int
    hi: int


@dataclass(frozen=True)
class QueryResult:
    kind: Kind
    rank: int = -1

    @property
    def found(self):
        return self.kind is Kind.FOUND


# ---------------------------------------------------------------------------
# search kernels


@numba.njit(cache=True, nogil=True)
def _lower_bound(arr, lo, hi, q):
    """First i in [lo, hi) with arr[i] >= q, or hi."""
    while lo < hi:
        mid = (lo + hi) >> 1
        if arr[mid] < q:
            lo = mid + 1
        else:
            hi = mid
    return lo


@numba.njit(cache=True, nogil=True)
def _gallop_fix(arr, base, end, p, q):
    """Make ``p`` the true lower bound of q in arr[base:end].

    Returns (p, steps) where steps counts extra probes (0 when p was right).
    """
    steps = 0
    if p > base and arr[p - 1] >= q:
        hi = p - 1
        step = 1
        lo = hi - step
        while lo > base and arr[lo] >= q:
            steps += 1
            hi = lo
            step *= 2
            lo = hi - step
        if lo < base:
            lo = base
        steps += 1
        return _lower_bound(arr, lo, hi, q), steps
    if p < end and arr[p] < q:
        lo = p + 1
        step = 1
        hi = lo + step
        while hi < end and arr[hi] < q:
            steps += 1
            lo = hi + 1
            step *= 2
            hi = lo + step
        if hi > end:
            hi = end
        steps += 1
        return _lower_bound(arr, lo, hi, q), steps
    return p, steps


@numba.njit(cache=True, nogil=True)
def _exp_lower_bound(arr, lo, hi, q):
    """Lower bound of q in arr[lo:hi+1] by exponential search outward from lo..hi's
    left end; used when the final search is configured as exponential."""
    n = hi + 1
    if lo >= n or arr[lo] >= q:
        return lo
    step = 1
    a = lo + 1
    b = lo + step
    while b < n and arr[b] < q:
        a = b + 1
        step *= 2
        b = lo + step
    if b > n:
        b = n
    return _lower_bound(arr, a, b, q)


@numba.njit(cache=True, nogil=True)
def _tree_rightmost(base_keys, tkeys, toffs, fanout, q, strict):
    """Rightmost index i of base_keys with base_keys[i] <= q (< q if strict); -1 if none.

    ``tkeys`` holds the upper levels bottom-up: level u is base_keys[::fanout**(u+1)].
    """
    nup = toffs.shape[0] - 1
    node_lo = 0
    if nup == 0:
        node_hi = base_keys.shape[0]
    else:
        node_hi = toffs[nup] - toffs[nup - 1]
    for u in range(nup - 1, -2, -1):
        if u >= 0:
            off = toffs[u]
            lo = off + node_lo
            hi = off + node_hi
            arr = tkeys
        else:
            off = 0
            lo = node_lo
            hi = node_hi
            arr = base_keys
        # rightmost in arr[lo:hi] satisfying the predicate
        a = lo
        b = hi
        while a < b:
            mid = (a + b) >> 1
            if (arr[mid] < q) if strict else (arr[mid] <= q):
                a = mid + 1
            else:
                b = mid
        idx = a - 1 - off
        if idx < node_lo:
            return -1
        if u < 0:
            return idx
        below = (toffs[u] - toffs[u - 1]) if u >= 1 else base_keys.shape[0]
        node_lo = idx * fanout
        node_hi = min(node_lo + fanout, below)
    return -1


@numba.njit(cache=True, nogil=True)
def _predict(fk, sl, ic, s, seg_end, q, size):
    """Floored prediction of segment s, clamped by the next segment's own start."""
    pos = floor_clamp(sl[s] * _signed_delta(q, fk[s]) + ic[s], size - 1)
    if s + 1 < seg_end:
        g = floor_clamp(ic[s + 1], size - 1)
        if g < pos:
            pos = g
    return pos


@numba.njit(cache=True, nogil=True)
def _leaf_segment(router, fk, sl, ic, offs, eps_int, tkeys, toffs, fanout, q):
    """Global index of the leaf segment responsible for q, plus internal fix-up probes."""
    L = offs.shape[0] - 1
    leaf_lo = offs[L - 1]
    leaf_hi = offs[L]
    fixes = 0
    if router == 0:
        a = leaf_lo
        b = leaf_hi
        while a < b:
            mid = (a + b) >> 1
            if fk[mid] <= q:
                a = mid + 1
            else:
                b = mid
        s = a - 1
        if s < leaf_lo:
            s = leaf_lo
        return s, fixes
    if router == 1:
        i = _tree_rightmost(fk[leaf_lo:leaf_hi], tkeys, toffs, fanout, q, False)
        if i < 0:
            i = 0
        return leaf_lo + i, fixes
    s = offs[0]
    for lev in range(L - 1):
        nb = offs[lev + 1]
        ne = offs[lev + 2]
        size = ne - nb
        pos = _predict(fk, sl, ic, s, offs[lev + 1], q, size)
        lo = pos - eps_int
        if lo < 0:
            lo = 0
        hi = pos + eps_int
        if hi > size - 1:
            hi = size - 1
        p = _lower_bound(fk, nb + lo, nb + hi + 1, q)
        p, st = _gallop_fix(fk, nb, ne, p, q)
        fixes += st
        if p < ne and fk[p] == q:
            s = p
        else:
            s = p - 1
        if s < nb:
            s = nb
    return s, fixes


@numba.njit(cache=True, nogil=True)
def _approx(router, fk, sl, ic, offs, eps_int, eps_last, n, tkeys, toffs, fanout, q):
    s, fixes = _leaf_segment(router, fk, sl, ic, offs, eps_int, tkeys, toffs, fanout, q)
    L = offs.shape[0] - 1
    pos = _predict(fk, sl, ic, s, offs[L], q, n)
    lo = pos - eps_last
    if lo < 0:
        lo = 0
    hi = pos + eps_last
    if hi > n - 1:
        hi = n - 1
    return pos, lo, hi, fixes


@numba.njit(cache=True, nogil=True)
def _resolve(data, lo, hi, q, exponential):
    """Lower bound of q in data, searching [lo, hi] first."""
    if exponential:
        p = _exp_lower_bound(data, lo, hi, q)
    else:
        p = _lower_bound(data, lo, hi + 1, q)
    p, st = _gallop_fix(data, 0, data.shape[0], p, q)
    return p, st


@numba.njit(cache=True, nogil=True)
def _answer(data, q, p, qkind):
    n = data.shape[0]
    if p < n and data[p] == q:
        return 0, p
    if qkind == 2:
        if p == n:
            return 4, -1
        return 2, p
    if p == 0:
        return 3, -1
    return 1, p - 1


@numba.njit(cache=True, nogil=True)
def _upper_from_lower(data, p, q):
    # step over a run of keys equal to q
    n = data.shape[0]
    if p >= n or data[p] != q:
        return p
    step = 1
    lo = p + 1
    hi = lo + step
    while hi < n and data[hi] == q:
        lo = hi + 1
        step *= 2
        hi = lo + step
    if hi > n:
        hi = n
    while lo < hi:
        mid = (lo + hi) >> 1
        if data[mid] <= q:
            lo = mid + 1
        else:
            hi = mid
    return lo


@numba.njit(cache=True, nogil=True)
def _batch_approx(router, fk, sl, ic, offs, eps_int, eps_last, n, tkeys, toffs, fanout, qs):
    m = qs.shape[0]
    pos = np.empty(m, dtype=np.int64)
    lo = np.empty(m, dtype=np.int64)
    hi = np.empty(m, dtype=np.int64)
    fixes = 0
    for i in range(m):
        p, a, b, f = _approx(router, fk, sl, ic, offs, eps_int, eps_last, n, tkeys, toffs, fanout, qs[i])
        pos[i] = p
        lo[i] = a
        hi[i] = b
        fixes += f
    return pos, lo, hi, fixes


@numba.njit(cache=True, nogil=True)
def _batch_query(router, fk, sl, ic, offs, eps_int, eps_last, tkeys, toffs, fanout, data, qs, qkinds, exponential):
    m = qs.shape[0]
    n = data.shape[0]
    kinds = np.empty(m, dtype=np.int8)
    ranks = np.empty(m, dtype=np.int64)
    fixes = 0
    for i in range(m):
        q = qs[i]
        pos, lo, hi, f = _approx(router, fk, sl, ic, offs, eps_int, eps_last, n, tkeys, toffs, fanout, q)
        p, st = _resolve(data, lo, hi, q, exponential)
        fixes += f + st
        k, r = _answer(data, q, p, qkinds[i])
        kinds[i] = k
        ranks[i] = r
    return kinds, ranks, fixes


@numba.njit(cache=True, nogil=True)
def _batch_range(router, fk, sl, ic, offs, eps_int, eps_last, tkeys, toffs, fanout, data, los, his, exponential):
    m = los.shape[0]
    n = data.shape[0]
    starts = np.empty(m, dtype=np.int64)
    stops = np.empty(m, dtype=np.int64)
    for i in range(m):
        pos, lo, hi, f = _approx(router, fk, sl, ic, offs, eps_int, eps_last, n, tkeys, toffs, fanout, los[i])
        a, st = _resolve(data, lo, hi, los[i], exponential)
        pos, lo, hi, f = _approx(router, fk, sl, ic, offs, eps_int, eps_last, n, tkeys, toffs, fanout, his[i])
        b, st = _resolve(data, lo, hi, his[i], exponential)
        b = _upper_from_lower(data, b, his[i])
        starts[i] = a
        stops[i] = b if b > a else a
    return starts, stops


# ---------------------------------------------------------------------------
# static multiway tree (router and baseline share it)


class StaticMultiwayTree:
    """Implicit static B-tree over a sorted array.

    Level ``u`` above the base holds every ``fanout**(u+1)``-th base key, so a
    node is ``fanout`` consecutive entries and child pointers are arithmetic.
    """

    ENTRY_BYTES = 24

    def __init__(self, base_keys, fanout):
        if fanout < 2:
            raise ValueError("fanout must be >= 2")
        self.base = base_keys
        self.fanout = int(fanout)
        levels = []
        cur = base_keys
        while cur.shape[0] > self.fanout:
            cur = np.ascontiguousarray(cur[:: self.fanout])
            levels.append(cur)
        self.upper_sizes = [lv.shape[0] for lv in levels]
        if levels:
            self.tkeys = np.concatenate(levels)
        else:
            self.tkeys = np.empty(0, dtype=base_keys.dtype)
        self.toffs = np.zeros(len(levels) + 1, dtype=np.int64)
        np.cumsum(self.upper_sizes, out=self.toffs[1:])

    @property
    def height(self):
        return len(self.upper_sizes) + 1

    @property
    def entries(self):
        return self.base.shape[0] + int(self.toffs[-1])

    def rightmost(self, q, strict=False):
        return int(_tree_rightmost(self.base, self.tkeys, self.toffs, self.fanout, q, strict))


def _empty_tree(dtype):
    return np.empty(0, dtype=dtype), np.zeros(1, dtype=np.int64)


# ---------------------------------------------------------------------------


class PGMIndex:
    """Immutable PGM-index over a sorted key array.

    ``levels[0]`` is the root (one segment for the recursive router) and
    ``levels[-1]`` approximates the key array. ``data`` may be ``None`` for an
    index loaded without its keys; queries then need :meth:`attach`.
    """

    def __init__(self, levels, eps_last, eps_internal, router, key_count, data=None,
                 final_search="binary"):
        if final_search not in ("binary", "exponential"):
            raise ValueError("final_search must be 'binary' or 'exponential'")
        self.levels = list(levels)
        self.eps_last = int(eps_last)
        self.eps_internal = int(eps_internal)
        self.router = Router(router)
        self.key_count = int(key_count)
        self.final_search = final_search
        self.data = None
        self.key_dtype = self.levels[-1].first_keys.dtype
        self._fk = np.ascontiguousarray(np.concatenate([lv.first_keys for lv in self.levels]))
        self._sl = np.ascontiguousarray(np.concatenate([lv.slopes for lv in self.levels]))
        self._ic = np.ascontiguousarray(np.concatenate([lv.intercepts for lv in self.levels]))
        self._offs = np.zeros(len(self.levels) + 1, dtype=np.int64)
        np.cumsum([len(lv) for lv in self.levels], out=self._offs[1:])
        if self.router == Router.MULTIWAY:
            self.tree = StaticMultiwayTree(self.levels[-1].first_keys, max(2, 2 * self.eps_internal))
            self._tkeys, self._toffs, self._fanout = self.tree.tkeys, self.tree.toffs, self.tree.fanout
        else:
            self.tree = None
            self._tkeys, self._toffs = _empty_tree(self.key_dtype)
            self._fanout = 2
        if data is not None:
            self.attach(data)

    # -- construction helpers

    def attach(self, data):
        data = as_keys(data)
        if data.shape[0] != self.key_count:
            raise FormatError(f"key array has {data.shape[0]} keys, index expects {self.key_count}")
        if data.dtype != self.key_dtype:
            raise FormatError("key array type does not match the index")
        self.data = data
        return self

    def _need_data(self):
        if self.data is None:
            raise RuntimeError("index has no key array attached")
        return self.data

    def _kernel_args(self):
        return (int(self.router) if self.router != Router.WEIGHTED else int(Router.RECURSIVE),
                self._fk, self._sl, self._ic, self._offs, self.eps_internal, self.eps_last)

    # -- queries

    def approx_range(self, k):
        v, side = as_query(k, self.key_dtype)
        n = self.key_count
        if side < 0:
            v = self._fk[0]
        elif side > 0:
            v = np.uint64(2**64 - 1)
        r, fk, sl, ic, offs, ei, el = self._kernel_args()
        pos, lo, hi, _ = _approx(r, fk, sl, ic, offs, ei, el, n, self._tkeys, self._toffs, self._fanout, v)
        if side < 0:
            pos, lo, hi = 0, 0, min(el, n - 1)
        return ApproxRange(int(pos), int(lo), int(hi))

    def approx_range_many(self, qs):
        """Vectorised approx_range: returns (pos, lo, hi, internal_fixups)."""
        qs = np.ascontiguousarray(qs, dtype=self.key_dtype)
        r, fk, sl, ic, offs, ei, el = self._kernel_args()
        return _batch_approx(r, fk, sl, ic, offs, ei, el, self.key_count,
                             self._tkeys, self._toffs, self._fanout, qs)

    def _query(self, k, qkind):
        self._need_data()
        v, side = as_query(k, self.key_dtype)
        if side < 0:
            return QueryResult(Kind.SUCCESSOR, 0) if qkind == Q_SUCCESSOR else QueryResult(Kind.ABSENT_BELOW_MIN)
        if side > 0:
            if qkind == Q_SUCCESSOR:
                return QueryResult(Kind.ABSENT_ABOVE_MAX)
            return QueryResult(Kind.PREDECESSOR, self.key_count - 1)
        kinds, ranks = self.query_many(np.array([v], dtype=self.key_dtype),
                                       np.array([qkind], dtype=np.int8))
        return QueryResult(KIND_CODES[kinds[0]], int(ranks[0]))

    def lookup(self, k):
        """Exact rank of k (first occurrence), or its predecessor when absent."""
        return self._query(k, Q_LOOKUP)

    def predecessor(self, k):
        return self._query(k, Q_PREDECESSOR)

    def successor(self, k):
        return self._query(k, Q_SUCCESSOR)

    def query_many(self, qs, qkinds, return_fixes=False):
        """Batch lookup/predecessor/successor; ``qkinds`` holds 0/1/2 per query.

        Returns (kind codes, ranks[, fix-up probes]); codes index :data:`KIND_CODES`.
        """
        data = self._need_data()
        qs = np.ascontiguousarray(qs, dtype=self.key_dtype)
        qkinds = np.broadcast_to(np.asarray(qkinds, dtype=np.int8), qs.shape).copy()
        r, fk, sl, ic, offs, ei, el = self._kernel_args()
        kinds, ranks, fixes = _batch_query(r, fk, sl, ic, offs, ei, el, self._tkeys, self._toffs,
                                           self._fanout, data, qs, qkinds,
                                           self.final_search == "exponential")
        if return_fixes:
            return kinds, ranks, fixes
        return kinds, ranks

    def range_query(self, lo_key, hi_key):
        """Positions of all keys in [lo_key, hi_key] as a ``range``."""
        if lo_key > hi_key:
            raise ValueError("lo_key must be <= hi_key")
        data = self._need_data()
        lv, ls = as_query(lo_key, self.key_dtype)
        hv, hs = as_query(hi_key, self.key_dtype)
        if hs < 0 or ls > 0:
            return range(0, 0) if hs < 0 else range(self.key_count, self.key_count)
        if ls < 0:
            lv = data[0]
        if hs > 0:
            hv = data[-1]
        a, b = self.range_many(np.array([lv], dtype=self.key_dtype), np.array([hv], dtype=self.key_dtype))
        return range(int(a[0]), int(b[0]))

    def range_many(self, los, his):
        data = self._need_data()
        los = np.ascontiguousarray(los, dtype=self.key_dtype)
        his = np.ascontiguousarray(his, dtype=self.key_dtype)
        r, fk, sl, ic, offs, ei, el = self._kernel_args()
        return _batch_range(r, fk, sl, ic, offs, ei, el, self._tkeys, self._toffs, self._fanout,
                            data, los, his, self.final_search == "exponential")

    # -- reporting

    @property
    def height(self):
        return len(self.levels)

    def stats(self):
        per = [len(lv) for lv in self.levels]
        return {
            "levels": len(per),
            "segments_per_level": per,
            "total_segments": sum(per),
            "bytes": serialized_size(self),
            "router": self.router.name.lower(),
            "eps_last": self.eps_last,
            "eps_internal": self.eps_internal,
            "key_count": self.key_count,
        }

    def structurally_equal(self, other):
        return (self.router == other.router and self.eps_last == other.eps_last
                and self.eps_internal == other.eps_internal and self.key_count == other.key_count
                and len(self.levels) == len(other.levels)
                and all(a == b for a, b in zip(self.levels, other.levels)))

    def __repr__(self):
        return (f"PGMIndex(router={self.router.name.lower()}, n={self.key_count}, "
                f"eps_last={self.eps_last}, eps_internal={self.eps_internal}, "
                f"levels={[len(lv) for lv in self.levels]})")


def _check_eps(e, what):
    if isinstance(e, bool) or not isinstance(e, (int, np.integer)) or e < 1:
        raise EpsilonError(e)
    return int(e)


def build(keys, eps_last=64, eps_internal=DEFAULT_EPS_INTERNAL, router="recursive",
          final_search="binary"):
    """Build a PGM-index over sorted ``keys``.

    ``router`` is ``"binary"``, ``"multiway"`` (fanout ``2*eps_internal``) or
    ``"recursive"``. The recursive router always has at least two levels.
    """
    eps_last = _check_eps(eps_last, "eps_last")
    eps_internal = _check_eps(eps_internal, "eps_internal")
    router = Router[router.upper()] if isinstance(router, str) else Router(router)
    if router == Router.WEIGHTED:
        raise ValueError("use dist_aware.build_distribution_aware for weighted indexes")
    keys = as_keys(keys)
    leaf = build_optimal_pla(keys, eps_last)
    levels = [leaf]
    if router == Router.RECURSIVE:
        levels = recursive_levels(leaf, eps_internal)
    return PGMIndex(levels, eps_last, eps_internal, router, keys.shape[0], data=keys,
                    final_search=final_search)


def recursive_levels(leaf, eps_internal, builder=None):
    """Stack PLA levels over segment first keys until one segment remains (root first)."""
    builder = builder or (lambda ks: build_optimal_pla(ks, eps_internal))
    levels = [leaf]
    while len(levels[-1]) > 1 or len(levels) < 2:
        levels.append(builder(levels[-1].first_keys))
    levels.reverse()
    return levels


# ---------------------------------------------------------------------------
# serialization


def serialized_size(idx):
    return HEADER.size + sum(LEVEL_HEADER.size + SEGMENT_BYTES * len(lv) for lv in idx.levels)


def _record_dtype(tag):
    return np.dtype([("key", key_dtype(tag)), ("slope", "<f8"), ("intercept", "<f8")])


def write_index(idx, fp):
    tag = key_tag(idx.levels[-1].first_keys)
    fp.write(HEADER.pack(MAGIC, VERSION, tag, int(idx.router), idx.eps_last, idx.eps_internal,
                         idx.key_count, len(idx.levels)))
    rdt = _record_dtype(tag)
    for lv in idx.levels:
        fp.write(LEVEL_HEADER.pack(len(lv)))
        rec = np.empty(len(lv), dtype=rdt)
        rec["key"] = lv.first_keys
        rec["slope"] = lv.slopes
        rec["intercept"] = lv.intercepts
        fp.write(rec.tobytes())


def serialize(idx):
    buf = io.BytesIO()
    write_index(idx, buf)
    return buf.getvalue()


def _read_exact(fp, size, what):
    b = fp.read(size)
    if len(b) != size:
        raise TruncatedError(what)
    return b


def read_index(fp, data=None):
    head = fp.read(HEADER.size)
    if len(head) >= 4 and head[:4] != MAGIC:
        raise BadMagicError(head[:4])
    if len(head) != HEADER.size:
        raise TruncatedError("header")
    magic, version, tag, router, eps_last, eps_internal, n, nlev = HEADER.unpack(head)
    if version != VERSION:
        raise VersionError(version)
    if tag not in (KEY_U64, KEY_F64):
        raise FormatError(f"unknown key-type tag {tag}")
    try:
        router = Router(router)
    except ValueError:
        raise FormatError(f"unknown router tag {router}") from None
    if nlev < 1:
        raise FormatError("index has no levels")
    rdt = _record_dtype(tag)
    levels = []
    for li in range(nlev):
        (count,) = LEVEL_HEADER.unpack(_read_exact(fp, LEVEL_HEADER.size, f"level {li} header"))
        raw = _read_exact(fp, SEGMENT_BYTES * count, f"level {li} segments")
        rec = np.frombuffer(raw, dtype=rdt)
        eps = eps_last if li == nlev - 1 else eps_internal
        level_n = n if li == nlev - 1 else None
        levels.append((rec, eps, level_n))
    out = []
    for li, (rec, eps, level_n) in enumerate(levels):
        if level_n is None:
            level_n = len(levels[li + 1][0])
        out.append(PLAModel(
            first_keys=np.ascontiguousarray(rec["key"]).astype(key_dtype(tag).newbyteorder("=")),
            slopes=np.ascontiguousarray(rec["slope"]).astype(np.float64),
            intercepts=np.ascontiguousarray(rec["intercept"]).astype(np.float64),
            epsilon=eps, n_keys=level_n))
    return PGMIndex(out, eps_last, eps_internal, router, n, data=data)


def deserialize(blob, data=None):
    return read_index(io.BytesIO(blob), data=data)


def save(idx, path):
    with open(path, "wb") as fp:
        write_index(idx, fp)


def load(path, data=None):
    with open(path, "rb") as fp:
        return read_index(fp, data=data)
