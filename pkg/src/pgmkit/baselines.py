"""Comparison structures answering the same queries as PGMIndex."""
import io
import struct

import numba
import numpy as np

from .index import KIND_CODES, QueryResult, StaticMultiwayTree, _answer, _tree_rightmost
from .keys import as_keys, as_query, key_tag

TREE_MAGIC = b"PGMT"
TREE_VERSION = 1
TREE_HEADER = struct.Struct("<4sHBIQH")
TREE_LEVEL_HEADER = struct.Struct("<Q")
ENTRY_BYTES = 24


@numba.njit(cache=True, nogil=True)
def _binary_batch(data, qs, qkinds):
    m = qs.shape[0]
    kinds = np.empty(m, dtype=np.int8)
    ranks = np.empty(m, dtype=np.int64)
    for i in range(m):
        q = qs[i]
        lo = 0
        hi = data.shape[0]
        while lo < hi:
            mid = (lo + hi) >> 1
            if data[mid] < q:
                lo = mid + 1
            else:
                hi = mid
        k, r = _answer(data, q, lo, qkinds[i])
        kinds[i] = k
        ranks[i] = r
    return kinds, ranks


@numba.njit(cache=True, nogil=True)
def _tree_batch(data, tkeys, toffs, fanout, qs, qkinds):
    m = qs.shape[0]
    kinds = np.empty(m, dtype=np.int8)
    ranks = np.empty(m, dtype=np.int64)
    for i in range(m):
        q = qs[i]
        p = _tree_rightmost(data, tkeys, toffs, fanout, q, True) + 1
        k, r = _answer(data, q, p, qkinds[i])
        kinds[i] = k
        ranks[i] = r
    return kinds, ranks


@numba.njit(cache=True, nogil=True)
def _tree_range(data, tkeys, toffs, fanout, los, his):
    m = los.shape[0]
    starts = np.empty(m, dtype=np.int64)
    stops = np.empty(m, dtype=np.int64)
    for i in range(m):
        a = _tree_rightmost(data, tkeys, toffs, fanout, los[i], True) + 1
        b = _tree_rightmost(data, tkeys, toffs, fanout, his[i], False) + 1
        starts[i] = a
        stops[i] = b if b > a else a
    return starts, stops


class _Base:
    """Scalar query helpers shared by the baselines."""

    def _query(self, k, qkind):
        v, side = as_query(k, self.data.dtype)
        n = self.data.shape[0]
        if side < 0:
            return QueryResult(KIND_CODES[2], 0) if qkind == 2 else QueryResult(KIND_CODES[3])
        if side > 0:
            return QueryResult(KIND_CODES[4]) if qkind == 2 else QueryResult(KIND_CODES[1], n - 1)
        kinds, ranks = self.query_many(np.array([v], dtype=self.data.dtype), np.array([qkind], dtype=np.int8))
        return QueryResult(KIND_CODES[kinds[0]], int(ranks[0]))

    def lookup(self, k):
        return self._query(k, 0)

    def predecessor(self, k):
        return self._query(k, 1)

    def successor(self, k):
        return self._query(k, 2)

    def range_query(self, lo_key, hi_key):
        if lo_key > hi_key:
            raise ValueError("lo_key must be <= hi_key")
        lv, ls = as_query(lo_key, self.data.dtype)
        hv, hs = as_query(hi_key, self.data.dtype)
        n = self.data.shape[0]
        if hs < 0 or ls > 0:
            return range(0, 0) if hs < 0 else range(n, n)
        lv = self.data[0] if ls < 0 else lv
        hv = self.data[-1] if hs > 0 else hv
        a, b = self.range_many(np.array([lv], dtype=self.data.dtype), np.array([hv], dtype=self.data.dtype))
        return range(int(a[0]), int(b[0]))


class BinarySearchBaseline(_Base):
    """Plain binary search over the sorted array; no extra space."""

    name = "binary_search"

    def __init__(self, keys):
        self.data = as_keys(keys)

    @property
    def nbytes(self):
        return 0

    def query_many(self, qs, qkinds):
        qs = np.ascontiguousarray(qs, dtype=self.data.dtype)
        qkinds = np.broadcast_to(np.asarray(qkinds, dtype=np.int8), qs.shape).copy()
        return _binary_batch(self.data, qs, qkinds)

    def range_many(self, los, his):
        los = np.ascontiguousarray(los, dtype=self.data.dtype)
        his = np.ascontiguousarray(his, dtype=self.data.dtype)
        a = np.searchsorted(self.data, los, side="left")
        b = np.searchsorted(self.data, his, side="right")
        return a, np.maximum(a, b)


class MultiwayTreeBaseline(_Base):
    """Static multiway tree over every key, 24-byte entries (key, child, rank).

    ``fanout = node_bytes // 24``; the base level holds one entry per key.
    """

    name = "multiway_tree"

    def __init__(self, keys, node_bytes=128):
        self.data = as_keys(keys)
        self.node_bytes = int(node_bytes)
        self.fanout = fanout_for(node_bytes)
        self.tree = StaticMultiwayTree(self.data, self.fanout)

    @property
    def levels(self):
        return [self.data.shape[0]] + self.tree.upper_sizes

    @property
    def nbytes(self):
        return TREE_HEADER.size + sum(TREE_LEVEL_HEADER.size + ENTRY_BYTES * c for c in self.levels)

    def query_many(self, qs, qkinds):
        qs = np.ascontiguousarray(qs, dtype=self.data.dtype)
        qkinds = np.broadcast_to(np.asarray(qkinds, dtype=np.int8), qs.shape).copy()
        return _tree_batch(self.data, self.tree.tkeys, self.tree.toffs, self.fanout, qs, qkinds)

    def range_many(self, los, his):
        los = np.ascontiguousarray(los, dtype=self.data.dtype)
        his = np.ascontiguousarray(his, dtype=self.data.dtype)
        return _tree_range(self.data, self.tree.tkeys, self.tree.toffs, self.fanout, los, his)

    def write(self, fp):
        tag = key_tag(self.data)
        fp.write(TREE_HEADER.pack(TREE_MAGIC, TREE_VERSION, tag, self.fanout, self.data.shape[0],
                                  len(self.levels)))
        rec = np.dtype([("key", self.data.dtype), ("child", "<u8"), ("rank", "<u8")])
        arrays = [self.data] + [self.tree.tkeys[self.tree.toffs[u]:self.tree.toffs[u + 1]]
                                for u in range(len(self.tree.upper_sizes))]
        for u, keys in enumerate(arrays):
            fp.write(TREE_LEVEL_HEADER.pack(keys.shape[0]))
            out = np.empty(keys.shape[0], dtype=rec)
            i = np.arange(keys.shape[0], dtype=np.uint64)
            out["key"] = keys
            out["child"] = i * np.uint64(self.fanout) if u else 0
            out["rank"] = i * np.uint64(self.fanout**u)
            fp.write(out.tobytes())

    def serialize(self):
        buf = io.BytesIO()
        self.write(buf)
        return buf.getvalue()


def fanout_for(node_bytes):
    f = int(node_bytes) // ENTRY_BYTES
    if f < 2:
        raise ValueError("node must hold at least two 24-byte entries")
    return f
