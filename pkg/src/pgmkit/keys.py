"""Key-array normalisation.

Keys are either unsigned 64-bit integers or finite 64-bit floats. Everything
downstream works on a contiguous numpy array of one of those two dtypes.
"""
import numpy as np

from .errors import EmptyDatasetError, PGMError, UnsortedInputError

KEY_U64 = 0
KEY_F64 = 1

_DTYPES = {KEY_U64: np.dtype("<u8"), KEY_F64: np.dtype("<f8")}


def key_dtype(tag):
    try:
        return _DTYPES[tag]
    except KeyError:
        raise PGMError(f"unknown key-type tag {tag}") from None


def key_tag(arr):
    return KEY_F64 if arr.dtype.kind == "f" else KEY_U64


def as_keys(keys, require_sorted=True, allow_empty=False):
    """Return ``keys`` as a contiguous uint64 or float64 array.

    Integer input must be non-negative; float input must be finite.
    """
    arr = np.asarray(keys)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    if arr.size == 0:
        if allow_empty:
            return np.empty(0, dtype=np.uint64)
        raise EmptyDatasetError()
    if arr.dtype.kind == "f":
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise PGMError("keys must be finite (no NaN/inf)")
    elif arr.dtype.kind in "iu":
        if arr.dtype.kind == "i" and arr.min() < 0:
            raise PGMError("integer keys must be non-negative")
        arr = np.ascontiguousarray(arr, dtype=np.uint64)
    elif arr.dtype == object:
        # python ints beyond int64
        arr = np.array([int(k) for k in arr], dtype=np.uint64)
    else:
        raise PGMError(f"unsupported key dtype {arr.dtype}")
    if require_sorted and arr.size > 1 and not np.all(arr[1:] >= arr[:-1]):
        bad = int(np.flatnonzero(arr[1:] < arr[:-1])[0])
        raise UnsortedInputError(f"keys[{bad + 1}] < keys[{bad}]")
    return arr


def as_query(q, dtype):
    """Coerce a scalar query to the index key dtype.

    Returns ``(value, side)`` where ``side`` is -1 / +1 when an integer query
    falls outside the u64 universe (``value`` is then meaningless) and 0 otherwise.
    """
    if dtype.kind == "f":
        q = float(q)
        if q != q:
            raise PGMError("query key must not be NaN")
        return q, 0
    if isinstance(q, float):
        if q != q:
            raise PGMError("query key must not be NaN")
        if q < 0:
            return 0, -1
        if q >= 2.0**64:
            return 0, 1
        if not q.is_integer():
            raise PGMError("fractional query on an integer-keyed index")
    q = int(q)
    if q < 0:
        return 0, -1
    if q > 2**64 - 1:
        return 0, 1
    return np.uint64(q), 0


def distinct_with_ranks(keys):
    """Distinct keys and the first-occurrence rank of each."""
    n = keys.shape[0]
    if n == 0:
        return keys, np.empty(0, dtype=np.int64)
    mask = np.empty(n, dtype=bool)
    mask[0] = True
    np.not_equal(keys[1:], keys[:-1], out=mask[1:])
    if mask.all():
        return keys, np.arange(n, dtype=np.int64)
    ranks = np.flatnonzero(mask).astype(np.int64)
    return keys[mask], ranks
