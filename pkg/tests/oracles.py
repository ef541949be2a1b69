"""Reference answers computed independently of the package code."""
import bisect
import math
from fractions import Fraction

import numpy as np
from scipy.optimize import linprog


def first_ranks(keys):
    """(distinct keys, first-occurrence rank) by a plain scan."""
    xs, rs = [], []
    for i, k in enumerate(keys):
        if not xs or k != xs[-1]:
            xs.append(k)
            rs.append(i)
    return xs, rs


def scan_lower_bound(keys, q):
    for i, k in enumerate(keys):
        if k >= q:
            return i
    return len(keys)


def lookup(keys, q):
    """('found'|'predecessor'|'absent_below_min', rank)."""
    i = bisect.bisect_left(keys, q)
    if i < len(keys) and keys[i] == q:
        return "found", i
    if i == 0:
        return "absent_below_min", -1
    return "predecessor", i - 1


def predecessor(keys, q):
    i = bisect.bisect_left(keys, q)
    if i < len(keys) and keys[i] == q:
        return "found", i
    if i == 0:
        return "absent_below_min", -1
    return "predecessor", i - 1


def successor(keys, q):
    i = bisect.bisect_left(keys, q)
    if i == len(keys):
        return "absent_above_max", -1
    return ("found" if keys[i] == q else "successor"), i


def range_ranks(keys, lo, hi):
    a = bisect.bisect_left(keys, lo)
    b = bisect.bisect_right(keys, hi)
    return a, max(a, b)


def line_fits(xs, ys, rs):
    """True iff some line passes within rs[i] of (xs[i], ys[i]) for every i (LP feasibility)."""
    if len(xs) <= 2:
        return True
    x0 = xs[0]
    x = np.array([float(v - x0) for v in xs])
    y = np.asarray(ys, dtype=float)
    r = np.asarray(rs, dtype=float)
    # a*x + b <= y + r   and   -(a*x + b) <= -(y - r)
    A = np.vstack([np.column_stack([x, np.ones_like(x)]), -np.column_stack([x, np.ones_like(x)])])
    ub = np.concatenate([y + r, -(y - r)])
    res = linprog([0, 0], A_ub=A, b_ub=ub, bounds=[(None, None), (None, None)], method="highs")
    return res.status == 0


def strip_fits_exact(xs, ys, eps):
    """Exact rational test: the points fit a band of vertical height 2*eps.

    The minimal vertical height over all slopes is attained at a slope through
    two of the points, so trying every pair's slope (and slope 0) is exhaustive.
    """
    n = len(xs)
    if n <= 2:
        return True
    cands = {Fraction(0)}
    for i in range(n):
        for j in range(i + 1, n):
            cands.add(Fraction(ys[j] - ys[i], xs[j] - xs[i]))
    for a in cands:
        vals = [ys[i] - a * xs[i] for i in range(n)]
        if max(vals) - min(vals) <= 2 * eps:
            return True
    return False


def brute_min_segments(keys, eps):
    """Minimum segment count by DP with the exact strip test; O(n^4) so tiny inputs only."""
    xs, ys = first_ranks(list(keys))
    xs = [int(v) for v in xs]
    n = len(xs)
    best = [0] + [math.inf] * n
    for j in range(1, n + 1):
        for i in range(j):
            if best[i] + 1 < best[j] and strip_fits_exact(xs[i:j], ys[i:j], eps):
                best[j] = best[i] + 1
    return best[n]


def responsible(first_keys, k):
    return max(bisect.bisect_right(list(first_keys), k) - 1, 0)


def pla_violations(model, keys):
    """Count distinct keys whose floored prediction misses the first-occurrence rank by > eps."""
    xs, rs = first_ranks(list(keys))
    fks = [v for v in np.asarray(model.first_keys).tolist()]
    bad = 0
    for k, r in zip(xs, rs):
        s = responsible(fks, k)
        pred = math.floor(float(model.slopes[s]) * (float(k) - float(fks[s])) + float(model.intercepts[s]))
        if abs(pred - r) > model.epsilon:
            bad += 1
    return bad
