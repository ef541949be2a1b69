"""Piecewise linear epsilon-approximations of the rank function of sorted keys.

Points are ``(key, rank)`` pairs where ``rank`` is the 0-based position of the
first occurrence of ``key``. A segment is valid for a point when its
prediction stays inside the vertical band ``[rank - e, rank + e]``; ``e`` is
``epsilon`` for the uniform builders and a per-point half-width for
:func:`build_weighted_pla`.

Segments store their intercept relative to ``first_key``: the prediction is
``slope * (k - first_key) + intercept``.
"""
import math
from dataclasses import dataclass

import numba
import numpy as np

from .errors import EpsilonError, OracleSizeError, UnsortedInputError
from .keys import as_keys, distinct_with_ranks

ORACLE_MAX_KEYS = 2000


@dataclass(frozen=True)
class Segment:
    first_key: object
    slope: float
    intercept: float

    def __call__(self, k):
        return segment_eval(self, k)


@dataclass(frozen=True, eq=False)
class PLAModel:
    """An ordered run of segments; arrays are parallel and read-only."""

    first_keys: np.ndarray
    slopes: np.ndarray
    intercepts: np.ndarray
    epsilon: int
    n_keys: int

    def __post_init__(self):
        for a in (self.first_keys, self.slopes, self.intercepts):
            a.setflags(write=False)

    def __len__(self):
        return self.first_keys.shape[0]

    @property
    def segments(self):
        return [Segment(k.item(), float(s), float(b))
                for k, s, b in zip(self.first_keys, self.slopes, self.intercepts)]

    def responsible(self, k):
        """Index of the rightmost segment with ``first_key <= k`` (0 if none)."""
        i = int(np.searchsorted(self.first_keys, k, side="right")) - 1
        return max(i, 0)

    def predict(self, keys):
        """Floored predictions for an array of keys, clamped to ``[0, n_keys-1]``."""
        keys = np.asarray(keys, dtype=self.first_keys.dtype)
        seg = np.searchsorted(self.first_keys, keys, side="right") - 1
        np.maximum(seg, 0, out=seg)
        return _eval_many(self.first_keys, self.slopes, self.intercepts, seg, keys, self.n_keys)

    def __eq__(self, other):
        if not isinstance(other, PLAModel):
            return NotImplemented
        return (self.epsilon == other.epsilon and self.n_keys == other.n_keys
                and np.array_equal(self.first_keys, other.first_keys)
                and np.array_equal(self.slopes, other.slopes)
                and np.array_equal(self.intercepts, other.intercepts))

    __hash__ = None


def segment_eval(s, k):
    """``floor(slope * (k - first_key) + intercept)`` as a Python int."""
    fk = s.first_key
    if isinstance(fk, int) and isinstance(k, (int, np.integer)):
        d = float(int(k) - fk)
    else:
        d = float(k) - float(fk)
    return math.floor(s.slope * d + s.intercept)


@numba.njit(cache=True, nogil=True)
def _signed_delta(k, fk):
    # key - first_key without wrapping for unsigned keys
    if k >= fk:
        return float(k - fk)
    return -float(fk - k)


@numba.njit(cache=True, nogil=True)
def floor_clamp(v, hi):
    """floor(v) clamped to [0, hi]; safe for huge or non-finite v."""
    if not v > 0.0:
        return 0
    if v >= hi:
        return hi
    return int(math.floor(v))


@numba.njit(cache=True, nogil=True)
def _eval_many(fks, slopes, inters, seg, keys, n):
    out = np.empty(keys.shape[0], dtype=np.int64)
    for i in range(keys.shape[0]):
        s = seg[i]
        out[i] = floor_clamp(slopes[s] * _signed_delta(keys[i], fks[s]) + inters[s], n - 1)
    return out


@numba.njit(cache=True, nogil=True)
def _guard_rounding(keys, ranks, errs, uniform, starts, slopes, inters, m):
    """Lift intercepts so no covered point floors below its band.

    The hull arithmetic is exact for moderate integers, but the final
    slope/intercept division is not; a line touching a band edge can land an
    ulp under it, which flooring would turn into a full unit of error.
    """
    n = keys.shape[0]
    for s in range(m):
        a = starts[s]
        b = starts[s + 1] if s + 1 < m else n
        first = keys[a]
        gap = 0.0
        for t in range(a, b):
            e = errs[0] if uniform else errs[t]
            d = slopes[s] * float(keys[t] - first) + inters[s] - float(ranks[t])
            g = -e - d
            if g > gap:
                gap = g
        if gap > 0.0:
            inters[s] = np.nextafter(inters[s] + gap, np.inf)


@numba.njit(cache=True, nogil=True)
def _cross(ox, oy, ax, ay, bx, by):
    return (ax - ox) * (by - oy) - (ay - oy) * (bx - ox)


@numba.njit(cache=True, nogil=True)
def _optimal_kernel(keys, ranks, errs, uniform):
    """Streaming minimum-segment cover (convex hulls of the band endpoints).

    Returns (start index of each segment, slopes, local intercepts, count).
    """
    n = keys.shape[0]
    starts = np.empty(n, dtype=np.int64)
    slopes = np.empty(n, dtype=np.float64)
    inters = np.empty(n, dtype=np.float64)
    # lower hull of the upper endpoints / upper hull of the lower endpoints
    ux = np.empty(n, dtype=np.float64)
    uy = np.empty(n, dtype=np.float64)
    lx = np.empty(n, dtype=np.float64)
    ly = np.empty(n, dtype=np.float64)
    m = 0
    i = 0
    while i < n:
        first = keys[i]
        e = errs[0] if uniform else errs[i]
        y = float(ranks[i])
        # rectangle: r0/r2 bound the minimum slope, r1/r3 the maximum slope
        r0x = 0.0
        r0y = y + e
        r1x = 0.0
        r1y = y - e
        r2x = 0.0
        r2y = 0.0
        r3x = 0.0
        r3y = 0.0
        ux[0] = 0.0
        uy[0] = r0y
        lx[0] = 0.0
        ly[0] = r1y
        usz = 1
        lsz = 1
        ust = 0
        lst = 0
        j = i + 1
        if j < n:
            e = errs[0] if uniform else errs[j]
            x = float(keys[j] - first)
            y = float(ranks[j])
            r2x = x
            r2y = y - e
            r3x = x
            r3y = y + e
            ux[1] = x
            uy[1] = y + e
            lx[1] = x
            ly[1] = y - e
            usz = 2
            lsz = 2
            j += 1
            while j < n:
                e = errs[0] if uniform else errs[j]
                x = float(keys[j] - first)
                y = float(ranks[j])
                p1y = y + e
                p2y = y - e
                s1dx = r2x - r0x
                s1dy = r2y - r0y
                s2dx = r3x - r1x
                s2dy = r3y - r1y
                # upper endpoint below the min-slope line, or lower endpoint
                # above the max-slope line: no line stabs every band
                if (p1y - r2y) * s1dx < (x - r2x) * s1dy:
                    break
                if (p2y - r3y) * s2dx > (x - r3x) * s2dy:
                    break
                if (p1y - r1y) * s2dx < (x - r1x) * s2dy:
                    mdx = lx[lst] - x
                    mdy = ly[lst] - p1y
                    mi = lst
                    for k in range(lst + 1, lsz):
                        vdx = lx[k] - x
                        vdy = ly[k] - p1y
                        if vdy * mdx > vdx * mdy:
                            break
                        mdx = vdx
                        mdy = vdy
                        mi = k
                    r1x = lx[mi]
                    r1y = ly[mi]
                    r3x = x
                    r3y = p1y
                    lst = mi
                    end = usz
                    while end >= ust + 2 and _cross(ux[end - 2], uy[end - 2], ux[end - 1], uy[end - 1], x, p1y) <= 0.0:
                        end -= 1
                    ux[end] = x
                    uy[end] = p1y
                    usz = end + 1
                if (p2y - r0y) * s1dx > (x - r0x) * s1dy:
                    mdx = ux[ust] - x
                    mdy = uy[ust] - p2y
                    mi = ust
                    for k in range(ust + 1, usz):
                        vdx = ux[k] - x
                        vdy = uy[k] - p2y
                        if vdy * mdx < vdx * mdy:
                            break
                        mdx = vdx
                        mdy = vdy
                        mi = k
                    r0x = ux[mi]
                    r0y = uy[mi]
                    r2x = x
                    r2y = p2y
                    ust = mi
                    end = lsz
                    while end >= lst + 2 and _cross(lx[end - 2], ly[end - 2], lx[end - 1], ly[end - 1], x, p2y) >= 0.0:
                        end -= 1
                    lx[end] = x
                    ly[end] = p2y
                    lsz = end + 1
                j += 1
        # j is one past the last covered point
        if j == i + 1:
            slope = 0.0
            inter = (r0y + r1y) / 2.0
        else:
            s1dx = r2x - r0x
            s1dy = r2y - r0y
            s2dx = r3x - r1x
            s2dy = r3y - r1y
            min_slope = s1dy / s1dx
            max_slope = s2dy / s2dx
            a = s1dx * s2dy - s1dy * s2dx
            if a == 0.0:
                slope = min_slope
                inter = ((r0y - slope * r0x) + (r1y - slope * r1x)) / 2.0
            else:
                b = ((r1x - r0x) * s2dy - (r1y - r0y) * s2dx) / a
                ix = r0x + b * s1dx
                iy = r0y + b * s1dy
                slope = (min_slope + max_slope) / 2.0
                inter = iy - ix * slope
        starts[m] = i
        slopes[m] = slope
        inters[m] = inter
        m += 1
        i = j
    return starts, slopes, inters, m


@numba.njit(cache=True, nogil=True)
def _shrinking_cone_kernel(keys, ranks, eps):
    n = keys.shape[0]
    starts = np.empty(n, dtype=np.int64)
    slopes = np.empty(n, dtype=np.float64)
    inters = np.empty(n, dtype=np.float64)
    m = 0
    i = 0
    while i < n:
        first = keys[i]
        y0 = float(ranks[i])
        hi = np.inf
        lo = 0.0
        j = i + 1
        while j < n:
            dx = float(keys[j] - first)
            dy = float(ranks[j]) - y0
            s = dy / dx
            if s > hi or s < lo:
                break
            t = (dy + eps) / dx
            if t < hi:
                hi = t
            t = (dy - eps) / dx
            if t > lo:
                lo = t
            j += 1
        if j == i + 1:
            slope = 0.0
        elif hi == np.inf:
            slope = lo
        else:
            slope = (lo + hi) / 2.0
        starts[m] = i
        slopes[m] = slope
        inters[m] = y0
        m += 1
        i = j
    return starts, slopes, inters, m


def _check_eps(epsilon):
    if isinstance(epsilon, bool) or not isinstance(epsilon, (int, np.integer)) or epsilon < 1:
        raise EpsilonError(epsilon)
    return int(epsilon)


def _model(keys, starts, slopes, inters, m, eps, n):
    return PLAModel(
        first_keys=np.ascontiguousarray(keys[starts[:m]]),
        slopes=slopes[:m].copy(),
        intercepts=inters[:m].copy(),
        epsilon=eps,
        n_keys=n,
    )


def build_optimal_pla(keys, epsilon):
    """Minimum-segment epsilon-approximation, one left-to-right pass.

    Duplicated keys contribute a single point at their first-occurrence rank.
    """
    eps = _check_eps(epsilon)
    keys = as_keys(keys)
    uk, ranks = distinct_with_ranks(keys)
    errs = np.array([float(eps)])
    starts, slopes, inters, m = _optimal_kernel(uk, ranks, errs, True)
    _guard_rounding(uk, ranks, errs, True, starts, slopes, inters, m)
    return _model(uk, starts, slopes, inters, m, eps, keys.shape[0])


def build_shrinking_cone(keys, epsilon):
    """Greedy cone-narrowing segmentation (comparison baseline)."""
    eps = _check_eps(epsilon)
    keys = as_keys(keys)
    uk, ranks = distinct_with_ranks(keys)
    starts, slopes, inters, m = _shrinking_cone_kernel(uk, ranks, float(eps))
    _guard_rounding(uk, ranks, np.array([float(eps)]), True, starts, slopes, inters, m)
    return _model(uk, starts, slopes, inters, m, eps, keys.shape[0])


def build_weighted_pla(xs, ys, y_ranges, n_keys=None):
    """Minimum-segment cover where point ``i`` tolerates ``|f(x_i) - y_i| <= y_ranges[i]``.

    ``xs`` must be strictly increasing; ``ys`` are the target positions.
    The model's ``epsilon`` is the ceiling of the widest band.
    """
    xs = as_keys(xs)
    if xs.shape[0] > 1 and not np.all(xs[1:] > xs[:-1]):
        raise UnsortedInputError("x must be strictly increasing")
    ys = np.ascontiguousarray(ys, dtype=np.float64)
    rng = np.ascontiguousarray(y_ranges, dtype=np.float64)
    if ys.shape != xs.shape or rng.shape != xs.shape:
        raise ValueError("xs, ys and y_ranges must have equal length")
    if not np.all(rng > 0):
        raise ValueError("y_range must be positive")
    starts, slopes, inters, m = _optimal_kernel(xs, ys, rng, False)
    _guard_rounding(xs, ys, rng, False, starts, slopes, inters, m)
    n = xs.shape[0] if n_keys is None else n_keys
    eps = max(1, int(math.ceil(float(rng.max()))))
    return _model(xs, starts, slopes, inters, m, eps, n)


# ---------------------------------------------------------------------------
# exact minimum-segment oracle (tests only)


@numba.njit(cache=True)
def _min_strip_fits(x, y, a, b, two_eps):
    """True iff points x[a:b], y[a:b] (integers) fit a strip of height <= two_eps.

    The thinnest vertical strip is supported by an edge of the convex hull, so
    only hull-edge slopes are candidates; heights are compared exactly as
    integers scaled by the slope denominator.
    """
    k = b - a
    if k <= 2:
        return True
    hx = np.empty(2 * k, dtype=np.int64)
    hy = np.empty(2 * k, dtype=np.int64)
    # monotone chain, lower then upper
    h = 0
    for i in range(a, b):
        while h >= 2 and (hx[h - 1] - hx[h - 2]) * (y[i] - hy[h - 2]) - (hy[h - 1] - hy[h - 2]) * (x[i] - hx[h - 2]) <= 0:
            h -= 1
        hx[h] = x[i]
        hy[h] = y[i]
        h += 1
    lower_end = h
    for i in range(b - 2, a - 1, -1):
        while h > lower_end and (hx[h - 1] - hx[h - 2]) * (y[i] - hy[h - 2]) - (hy[h - 1] - hy[h - 2]) * (x[i] - hx[h - 2]) <= 0:
            h -= 1
        hx[h] = x[i]
        hy[h] = y[i]
        h += 1
    h -= 1  # last point repeats the first
    for e in range(h):
        dx = hx[e + 1] - hx[e]
        dy = hy[e + 1] - hy[e]
        if dx < 0:
            dx = -dx
            dy = -dy
        if dx == 0:
            continue
        # residual r_i * dx = y_i * dx - dy * x_i
        rmax = -(1 << 62)
        rmin = 1 << 62
        for t in range(h):
            r = hy[t] * dx - dy * hx[t]
            if r > rmax:
                rmax = r
            if r < rmin:
                rmin = r
        if rmax - rmin <= two_eps * dx:
            return True
    return False


@numba.njit(cache=True)
def _dp_kernel(x, y, two_eps, exhaustive):
    n = x.shape[0]
    best = np.empty(n + 1, dtype=np.int64)
    best[0] = 0
    lo = 0
    for j in range(1, n + 1):
        # points lo..j-1 must fit; feasibility is hereditary so lo only grows
        if exhaustive:
            cur = 1 << 62
            for i in range(j):
                if best[i] + 1 < cur and _min_strip_fits(x, y, i, j, two_eps):
                    cur = best[i] + 1
            best[j] = cur
        else:
            while not _min_strip_fits(x, y, lo, j, two_eps):
                lo += 1
            cur = 1 << 62
            for i in range(lo, j):
                if best[i] + 1 < cur:
                    cur = best[i] + 1
            best[j] = cur
    return best[n]


def dp_oracle_min_segments(keys, epsilon, max_keys=ORACLE_MAX_KEYS, exhaustive=False):
    """Exact minimum number of segments by dynamic programming over split points.

    A range is coverable iff its points fit a strip of vertical height ``2*epsilon``.
    ``exhaustive=True`` tries every split point instead of the sliding window.
    """
    eps = _check_eps(epsilon)
    keys = as_keys(keys)
    if keys.shape[0] > max_keys:
        raise OracleSizeError(keys.shape[0], max_keys)
    uk, ranks = distinct_with_ranks(keys)
    if uk.dtype.kind == "f":
        if not np.all(uk == np.round(uk)):
            raise ValueError("oracle needs integral keys")
        x = (uk - uk[0]).astype(np.int64)
    else:
        x = (uk - uk[0]).astype(np.int64)
    if x[-1] >= 2**40:
        raise ValueError("oracle key span too large for exact arithmetic")
    return int(_dp_kernel(x, ranks.astype(np.int64), 2 * eps, exhaustive))


def bound_helpers(n, U, epsilon):
    """Closed-form bounds for n distinct increasing integers in a range of size U.

    Returns ``max_segments`` (upper bound on optimal segment count),
    ``min_full_strip_length`` and ``avg_points_per_strip``.
    """
    eps = _check_eps(epsilon)
    if not 0 < n <= U:
        raise ValueError("need 0 < n <= U")
    if n == U:
        return {"max_segments": 1, "min_full_strip_length": 8 * eps + 1,
                "avg_points_per_strip": math.inf}
    alpha = n / U
    return {
        "max_segments": math.ceil(n / (1 + 2 * eps / (1 - alpha))),
        "min_full_strip_length": 8 * eps + 1,
        "avg_points_per_strip": 1 + 2 * eps * U / (U - n),
    }


def max_abs_error(model, keys):
    """Largest ``|floor(f(k)) - rank(k)|`` over ``keys`` (first-occurrence ranks)."""
    keys = as_keys(keys)
    uk, ranks = distinct_with_ranks(keys)
    seg = np.searchsorted(model.first_keys, uk, side="right") - 1
    np.maximum(seg, 0, out=seg)
    pred = _eval_unclamped(model.first_keys, model.slopes, model.intercepts, seg, uk)
    return int(np.max(np.abs(pred - ranks)))


@numba.njit(cache=True)
def _eval_unclamped(fks, slopes, inters, seg, keys):
    out = np.empty(keys.shape[0], dtype=np.int64)
    for i in range(keys.shape[0]):
        s = seg[i]
        out[i] = int(math.floor(slopes[s] * _signed_delta(keys[i], fks[s]) + inters[s]))
    return out
