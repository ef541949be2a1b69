"""Synthetic datasets, dataset files and query workloads."""
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import BadMagicError, FormatError, PGMError, TruncatedError, UnsortedInputError, VersionError
from .keys import KEY_F64, KEY_U64, as_keys, key_dtype, key_tag

MAGIC = b"PGMD"
VERSION = 1
HEADER = struct.Struct("<4sHBHQ")

KINDS = ("uniform_gaps", "zipf_gaps", "piecewise_linear", "lognormal_gaps")
QUERY_KINDS = ("lookup", "predecessor", "successor", "range")

MAX_GAP = 1 << 32


@dataclass
class Dataset:
    keys: np.ndarray
    payload_size: int = 0
    payloads: bytes = b""
    note: str = ""

    def __post_init__(self):
        self.keys = as_keys(self.keys)
        if self.payload_size < 0 or self.payload_size > 0xFFFF:
            raise PGMError("payload size must fit in 16 bits")
        if self.payload_size and len(self.payloads) != self.payload_size * self.keys.shape[0]:
            raise PGMError("payload block does not match count * payload_size")

    @property
    def key_type(self):
        return "f64" if key_tag(self.keys) == KEY_F64 else "u64"

    def __len__(self):
        return self.keys.shape[0]


# ---------------------------------------------------------------------------
# generators


def _from_gaps(gaps, rng):
    gaps = np.minimum(gaps, MAX_GAP).astype(np.uint64)
    start = np.uint64(rng.integers(0, 1 << 20))
    return start + np.cumsum(gaps, dtype=np.uint64)


def uniform_gaps(n, seed=42, max_gap=100):
    rng = np.random.default_rng(seed)
    return _from_gaps(rng.integers(1, max_gap + 1, n), rng)


def zipf_gaps(n, seed=42, s=1.5):
    rng = np.random.default_rng(seed)
    return _from_gaps(rng.zipf(s, n), rng)


def lognormal_gaps(n, seed=42, sigma=2.0):
    rng = np.random.default_rng(seed)
    return _from_gaps(np.maximum(1, np.floor(rng.lognormal(0.0, sigma, n))), rng)


def piecewise_linear(n, seed=42, segments=10, noise=0):
    """Keys whose rank follows ``segments`` lines, each key displaced by at most
    ``noise`` positions' worth of key space.

    Within a piece with key gap ``g``, key ``i`` is ``base + g*i + u`` with
    ``u`` uniform in ``[0, g*noise]``; after sorting every rank sits within
    ``noise/2`` of the line through the piece's midline.
    """
    if segments < 1:
        raise PGMError("segments must be >= 1")
    if noise < 0:
        raise PGMError("noise must be >= 0")
    rng = np.random.default_rng(seed)
    segments = min(segments, n)
    cuts = np.sort(rng.choice(np.arange(1, n), segments - 1, replace=False)) if segments > 1 else np.empty(0, int)
    bounds = np.concatenate([[0], cuts, [n]]).astype(np.int64)
    out = np.empty(n, dtype=np.uint64)
    base = int(rng.integers(0, 1 << 20))
    for a, b in zip(bounds[:-1], bounds[1:]):
        g = int(rng.integers(1, 1000))
        i = np.arange(b - a, dtype=np.uint64)
        part = np.uint64(base) + np.uint64(g) * i
        if noise:
            part = part + rng.integers(0, g * noise + 1, b - a).astype(np.uint64)
            part.sort()
        out[a:b] = part
        base = int(part[-1]) + g * (noise + 1) + int(rng.integers(1, 1 << 16))
    return out


def generate(kind, n, seed=42, **params):
    """Dispatch to a named generator; returns a sorted uint64 array."""
    if n < 1:
        raise PGMError("n must be >= 1")
    gens = {"uniform_gaps": uniform_gaps, "zipf_gaps": zipf_gaps,
            "piecewise_linear": piecewise_linear, "lognormal_gaps": lognormal_gaps}
    if kind not in gens:
        raise PGMError(f"unknown dataset kind {kind!r}")
    params = {k: v for k, v in params.items() if v is not None}
    return gens[kind](n, seed=seed, **params)


def gen_dataset(kind, n, seed=42, payload_size=0, **params):
    keys = generate(kind, n, seed, **params)
    payloads = b""
    if payload_size:
        payloads = np.random.default_rng(seed + 1).integers(0, 256, n * payload_size, dtype=np.uint8).tobytes()
    note = f"{kind} n={n} seed={seed}" + "".join(f" {k}={v}" for k, v in sorted(params.items()) if v is not None)
    return Dataset(keys, payload_size, payloads, note)


# ---------------------------------------------------------------------------
# files


def write_dataset(ds, fp):
    tag = key_tag(ds.keys)
    fp.write(HEADER.pack(MAGIC, VERSION, tag, ds.payload_size, ds.keys.shape[0]))
    fp.write(ds.keys.astype(key_dtype(tag), copy=False).tobytes())
    if ds.payload_size:
        fp.write(ds.payloads)


def read_dataset(fp):
    head = fp.read(HEADER.size)
    if len(head) >= 4 and head[:4] != MAGIC:
        raise BadMagicError(head[:4])
    if len(head) != HEADER.size:
        raise TruncatedError("dataset header")
    _, version, tag, psize, count = HEADER.unpack(head)
    if version != VERSION:
        raise VersionError(version)
    if tag not in (KEY_U64, KEY_F64):
        raise FormatError(f"unknown key-type tag {tag}")
    raw = fp.read(8 * count)
    if len(raw) != 8 * count:
        raise TruncatedError("dataset keys")
    keys = np.frombuffer(raw, dtype=key_dtype(tag)).astype(key_dtype(tag).newbyteorder("="))
    payloads = b""
    if psize:
        payloads = fp.read(psize * count)
        if len(payloads) != psize * count:
            raise TruncatedError("dataset payloads")
    try:
        return Dataset(keys, psize, payloads)
    except UnsortedInputError as e:
        raise FormatError(f"dataset keys are not sorted ({e})") from None


def save_dataset(ds, path):
    with open(path, "wb") as fp:
        write_dataset(ds, fp)


def load_dataset(path):
    with open(path, "rb") as fp:
        return read_dataset(fp)


def read_text_keys(path):
    """One decimal key per line; integers give u64 keys, anything else f64."""
    tokens = []
    with open(path) as fp:
        for line in fp:
            line = line.strip()
            if line:
                tokens.append(line)
    if all(t.lstrip("+").isdigit() for t in tokens):
        vals = [int(t) for t in tokens]
        if vals and max(vals) > 2**64 - 1:
            raise FormatError("integer key exceeds 64 bits")
        arr = np.array(vals, dtype=np.uint64)
    else:
        try:
            arr = np.array([float(t) for t in tokens], dtype=np.float64)
        except ValueError as e:
            raise FormatError(f"bad key in text file: {e}") from None
    return as_keys(arr)


def write_text_keys(keys, path):
    with open(path, "w") as fp:
        for k in np.asarray(keys).tolist():
            fp.write(f"{k!r}\n" if isinstance(k, float) else f"{k}\n")


def ingest(path):
    """Load a user file: PGMD binary when the magic matches, text otherwise."""
    with open(path, "rb") as fp:
        head = fp.read(4)
    if head == MAGIC:
        ds = load_dataset(path)
    else:
        ds = Dataset(read_text_keys(path))
    ds.note = f"ingested from {path}"
    return ds


# ---------------------------------------------------------------------------
# workloads


@dataclass
class Workload:
    queries: np.ndarray
    kind: str = "lookup"
    distribution: str = "uniform"
    his: np.ndarray = field(default=None, repr=False)


def zipf_probs(n, s=1.0, seed=42):
    """Zipf(s) probabilities over n items, popularity order shuffled by seed."""
    w = 1.0 / np.power(np.arange(1, n + 1, dtype=np.float64), s)
    w = w[np.random.default_rng(seed).permutation(n)]
    return w / w.sum()


def make_workload(keys, n_queries, kind="lookup", distribution="uniform", seed=42, zipf_s=1.0,
                  miss_ratio=0.0, range_width=100):
    """Seeded queries over ``keys``.

    ``miss_ratio`` of the queries are drawn uniformly from the key span (mostly
    absent keys); the rest are indexed keys picked by the distribution.
    """
    if kind not in QUERY_KINDS:
        raise PGMError(f"unknown query kind {kind!r}")
    keys = as_keys(keys)
    rng = np.random.default_rng(seed)
    n = keys.shape[0]
    if distribution == "uniform":
        pick = rng.integers(0, n, n_queries)
    elif distribution == "zipf":
        pick = rng.choice(n, n_queries, p=zipf_probs(n, zipf_s, seed))
    else:
        raise PGMError(f"unknown distribution {distribution!r}")
    qs = keys[pick].copy()
    miss = rng.random(n_queries) < miss_ratio
    if miss.any():
        if keys.dtype.kind == "f":
            qs[miss] = rng.uniform(keys[0], keys[-1], int(miss.sum()))
        else:
            qs[miss] = rng.integers(int(keys[0]), int(keys[-1]) + 1, int(miss.sum()), dtype=np.uint64)
    his = None
    if kind == "range":
        if keys.dtype.kind == "f":
            his = qs + rng.uniform(0, range_width, n_queries)
        else:
            width = rng.integers(0, range_width + 1, n_queries).astype(np.uint64)
            his = qs + np.minimum(width, np.uint64(2**64 - 1) - qs)
    return Workload(qs, kind, distribution, his)
