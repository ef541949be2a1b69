"""Choosing epsilon under a space or a latency budget.

``minimize_time`` looks for the smallest epsilon whose serialized index fits
``s_max`` bytes: a bracketed binary search that, once a power law fitted on the
leaf segment counts explains the samples well, replaces some midpoints with a
guess blended toward the midpoint.

``minimize_space`` looks for the largest epsilon whose mean query time stays
under ``t_max``: an exponential search from the epsilon that balances the data
search term alone, followed by geometric bisection.
"""
import csv
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit

from .errors import InfeasibleBudgetError, InsufficientSamplesError, PGMError
from .index import DEFAULT_EPS_INTERNAL, HEADER, LEVEL_HEADER, SEGMENT_BYTES, build
from .keys import as_keys

R2_THRESHOLD = 0.95
INITIAL_BINARY_STEPS = 4
STOP_RATIO = 1.01
MIN_EPS = 8


@dataclass(frozen=True)
class CostModel:
    page_size: int = 1
    latency_c: float = 1e-9

    def __post_init__(self):
        if self.page_size < 1:
            raise ValueError("page size must be >= 1")
        if not self.latency_c > 0:
            raise ValueError("latency_c must be positive")


@dataclass(frozen=True)
class PowerLawFit:
    a: float
    b: float
    r_squared: float

    def __call__(self, eps):
        return self.a * np.power(np.asarray(eps, dtype=np.float64), -self.b)

    def solve(self, target):
        """epsilon at which the fit equals ``target`` (None when it never does)."""
        if target <= 0 or self.a <= 0 or self.b == 0:
            return None
        # Newton on log s = log a - b log eps is exact after one step
        u = 0.0
        for _ in range(2):
            g = math.log(self.a) - self.b * u - math.log(target)
            u -= g / -self.b
        return math.exp(u)


@dataclass
class TunerResult:
    epsilon_star: int
    achieved_space: int
    achieved_time: float
    iterations: int
    builds_performed: int
    samples: list
    trace: list = field(default_factory=list, repr=False)

    def write_trace(self, path):
        write_trace(self.trace, path)


def _power(eps, a, b):
    return a * np.power(eps, -b)


def fit_power_law(samples):
    """Least-squares fit of ``s = a * eps**-b`` (Levenberg-Marquardt).

    Starts from the closed-form log-log regression; R^2 is measured on the
    samples in linear space.
    """
    pts = np.asarray(samples, dtype=np.float64).reshape(-1, 2)
    eps, s = pts[:, 0], pts[:, 1]
    if np.unique(eps).shape[0] < 2:
        raise InsufficientSamplesError()
    if np.any(eps <= 0) or np.any(s <= 0):
        raise PGMError("power-law samples must be positive")
    slope, icpt = np.polyfit(np.log(eps), np.log(s), 1)
    p0 = (math.exp(icpt), -slope)
    try:
        with warnings.catch_warnings():
            # exact fits leave no residual to estimate a covariance from
            warnings.simplefilter("ignore", OptimizeWarning)
            (a, b), _ = curve_fit(_power, eps, s, p0=p0, method="lm", xtol=1e-15, ftol=1e-15,
                                  maxfev=10000)
    except RuntimeError:
        a, b = p0
    resid = s - _power(eps, a, b)
    ss_res = float(np.sum(resid * resid))
    ss_tot = float(np.sum((s - s.mean()) ** 2))
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res <= 1e-12 * max(1.0, float(np.sum(s * s))) else 0.0
    else:
        r2 = max(0.0, 1.0 - ss_res / ss_tot)
    return PowerLawFit(float(a), float(b), r2)


def cost_time(epsilon, m, cost):
    """Modelled query time ``c * log_{2eps}(m) * log2(2eps / B)`` in seconds."""
    if epsilon < 1 or m < 1:
        raise ValueError("epsilon and m must be >= 1")
    two = 2.0 * epsilon
    return cost.latency_c * (math.log(m) / math.log(two)) * math.log2(two / cost.page_size)


def cost_space(epsilon, m):
    """Geometric-sum bound on the total number of segments."""
    if epsilon < 1 or m < 1:
        raise ValueError("epsilon and m must be >= 1")
    return (2.0 * epsilon * m - 1.0) / (2.0 * epsilon - 1.0)


def default_interval(n, page_size=None):
    lo = max(1, page_size // 2) if page_size else MIN_EPS
    hi = max(lo, n // 2)
    return lo, hi


class _Builds:
    """Memoised index builds keyed by epsilon."""

    def __init__(self, keys, eps_internal):
        self.keys = keys
        self.eps_internal = eps_internal
        self.cache = {}

    def __call__(self, eps):
        eps = int(eps)
        if eps not in self.cache:
            idx = build(self.keys, eps, self.eps_internal, "recursive")
            st = idx.stats()
            self.cache[eps] = (st["bytes"], st["segments_per_level"][-1], st["total_segments"], st["levels"])
            self._check_monotone(eps)
        return self.cache[eps]

    def _check_monotone(self, eps):
        pts = sorted((e, v[1]) for e, v in self.cache.items())
        for (e1, m1), (e2, m2) in zip(pts, pts[1:]):
            if m2 > m1:
                raise PGMError(f"leaf segment count rose from {m1} at eps={e1} to {m2} at eps={e2}")

    @property
    def count(self):
        return len(self.cache)


def _guess(fit, s_max, info):
    _, leaf, total, levels = info
    overhead = HEADER.size + levels * LEVEL_HEADER.size
    target_leaf = (s_max - overhead) / (SEGMENT_BYTES * total / leaf)
    return fit.solve(target_leaf)


def minimize_time(keys, s_max, tol=0, interval=None, eps_internal=DEFAULT_EPS_INTERNAL,
                  strategy="guided", page_size=None):
    """Smallest epsilon in the interval whose serialized index is <= ``s_max`` bytes."""
    if s_max <= 0 or tol < 0:
        raise ValueError("s_max must be positive and tol non-negative")
    if strategy not in ("guided", "binary"):
        raise ValueError("strategy must be 'guided' or 'binary'")
    keys = as_keys(keys)
    lo, hi = interval or default_interval(keys.shape[0], page_size)
    builds = _Builds(keys, eps_internal)
    trace = []
    samples = []

    def probe(eps, it, action):
        info = builds(eps)
        samples.append((int(eps), info[1]))
        trace.append((it, int(eps), info[0], "", action))
        return info

    def result(eps, it):
        trace.append((it, int(eps), builds(eps)[0], "", "stop"))
        return TunerResult(int(eps), builds(eps)[0], math.nan, it, builds.count, sorted(set(samples)), trace)

    info = probe(lo, 0, "probe_lo")
    if info[0] <= s_max:
        return result(lo, 0)
    info = probe(hi, 0, "probe_hi")
    if info[0] > s_max:
        raise InfeasibleBudgetError(f"budget {s_max} B below the minimum achievable {info[0]} B", info[0])
    bad, good = lo, hi
    threshold = 2 * math.ceil(math.log2(max(2.0, math.log2(max(2, hi - lo + 1)))))
    guesses = 0
    it = 0
    while good - bad > 1 and s_max - builds(good)[0] > tol:
        it += 1
        mid = (bad + good) // 2
        nxt, action = mid, "binary"
        if strategy == "guided" and it > INITIAL_BINARY_STEPS and guesses < threshold:
            fit = fit_power_law(sorted(set(samples)))
            if fit.r_squared >= R2_THRESHOLD:
                g = _guess(fit, s_max, builds(good))
                if g is not None and math.isfinite(g):
                    rho = guesses / threshold
                    nxt = int(round(rho * mid + (1 - rho) * g))
                    nxt = min(max(nxt, bad + 1), good - 1)
                    guesses += 1
                    action = "guess"
        info = probe(nxt, it, action)
        if info[0] <= s_max:
            good = nxt
        else:
            bad = nxt
    return result(good, it)


# ---------------------------------------------------------------------------
# timers


class SyntheticTimer:
    """Deterministic query time from the cost model.

    Every level plus the final data search costs ``log2(2eps / B)`` steps of
    ``latency_c`` seconds, with ``log_{2eps}(m)`` levels above the data.
    """

    def __init__(self, keys, cost, eps_internal=DEFAULT_EPS_INTERNAL):
        self.keys = as_keys(keys)
        self.cost = cost
        self.eps_internal = eps_internal
        self.calls = 0
        self._m = {}

    def leaf_segments(self, eps):
        if eps not in self._m:
            self._m[eps] = len(build(self.keys, eps, self.eps_internal, "binary").levels[-1])
        return self._m[eps]

    def __call__(self, eps):
        self.calls += 1
        return synthetic_time(eps, self.leaf_segments(eps), self.cost)


def synthetic_time(eps, m, cost):
    two = 2.0 * eps
    return cost.latency_c * (1.0 + math.log(m) / math.log(two)) * math.log2(two / cost.page_size)


class QueryTimer:
    """Median over repeats of the mean time of a fixed seeded query batch."""

    def __init__(self, keys, n_queries=100_000, repeats=3, seed=42, eps_internal=DEFAULT_EPS_INTERNAL):
        self.keys = as_keys(keys)
        rng = np.random.default_rng(seed)
        self.queries = self.keys[rng.integers(0, self.keys.shape[0], n_queries)]
        self.repeats = repeats
        self.eps_internal = eps_internal
        self.calls = 0

    def __call__(self, eps):
        self.calls += 1
        idx = build(self.keys, eps, self.eps_internal, "recursive")
        idx.query_many(self.queries[:16], 0)
        runs = []
        for _ in range(self.repeats):
            t = time.perf_counter()
            idx.query_many(self.queries, 0)
            runs.append((time.perf_counter() - t) / self.queries.shape[0])
        return float(np.median(runs))


def minimize_space(keys, t_max, tol=0.0, timer=None, cost=None, interval=None,
                   stop_ratio=STOP_RATIO, eps_internal=DEFAULT_EPS_INTERNAL):
    """Largest epsilon whose measured query time is <= ``t_max + tol``."""
    if t_max <= 0 or tol < 0:
        raise ValueError("t_max must be positive and tol non-negative")
    keys = as_keys(keys)
    cost = cost or CostModel()
    timer = timer or QueryTimer(keys, eps_internal=eps_internal)
    lo, hi = interval or default_interval(keys.shape[0], cost.page_size if cost.page_size > 1 else None)
    measured = {}
    trace = []
    it = 0

    def probe(eps, action):
        eps = int(min(max(eps, lo), hi))
        if eps not in measured:
            measured[eps] = timer(eps)
            trace.append((it, eps, "", measured[eps], action))
        return eps, measured[eps] <= t_max + tol

    # solution of c * log2(2eps / B) = t_max, capped before 2**x overflows
    log_e0 = math.log2(cost.page_size / 2.0) + t_max / cost.latency_c
    e0 = hi if log_e0 > math.log2(hi) else max(lo, 2.0**log_e0)
    eps, ok = probe(e0, "start")
    if ok:
        good, bad = eps, None
        step = 2
        while good < hi:
            it += 1
            eps, ok = probe(min(hi, good * step), "expand_up")
            if not ok:
                bad = eps
                break
            good = eps
            step *= 2
    else:
        good, bad = None, eps
        step = 2
        while bad > lo:
            it += 1
            eps, ok = probe(max(lo, bad // step), "expand_down")
            if ok:
                good = eps
                break
            bad = eps
            step *= 2
        if good is None:
            best = min(measured.values())
            raise InfeasibleBudgetError(f"no epsilon meets {t_max} s; best measured {best} s", best)
    while bad is not None and bad - good > 1 and bad / good > stop_ratio:
        it += 1
        mid = int(round(math.sqrt(good * bad)))
        mid = min(max(mid, good + 1), bad - 1)
        eps, ok = probe(mid, "refine")
        if ok:
            good = eps
        else:
            bad = eps
    st = build(keys, good, eps_internal, "recursive").stats()
    trace.append((it, good, st["bytes"], measured[good], "stop"))
    samples = [(e, None) for e in sorted(measured)]
    return TunerResult(good, st["bytes"], measured[good], it, len(measured), samples, trace)


def minimize_time_binary(keys, s_max, tol=0, interval=None, eps_internal=DEFAULT_EPS_INTERNAL, page_size=None):
    """Plain bracketed binary search, the baseline for ``minimize_time``."""
    return minimize_time(keys, s_max, tol, interval, eps_internal, "binary", page_size)


# ---------------------------------------------------------------------------
# calibration and trace files


def calibrate_latency(size=1 << 23, n_queries=200_000, seed=42):
    """Seconds per binary-search step over an array larger than the caches."""
    rng = np.random.default_rng(seed)
    arr = np.sort(rng.integers(0, 2**62, size, dtype=np.uint64))
    qs = rng.integers(0, 2**62, n_queries, dtype=np.uint64)
    np.searchsorted(arr, qs[:100])
    t = time.perf_counter()
    np.searchsorted(arr, qs)
    per_query = (time.perf_counter() - t) / n_queries
    return per_query / math.log2(size)


def save_cost_model(cost, path):
    with open(path, "w") as fp:
        fp.write(f"latency_c_ns={cost.latency_c * 1e9!r}\n")
        fp.write(f"page_size_keys={cost.page_size}\n")


def load_cost_model(path):
    vals = {}
    with open(path) as fp:
        for line in fp:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            k, _, v = line.partition("=")
            vals[k.strip()] = v.strip()
    return CostModel(page_size=int(vals.get("page_size_keys", 1)),
                     latency_c=float(vals.get("latency_c_ns", 1.0)) * 1e-9)


def write_trace(rows, path):
    with open(path, "w", newline="") as fp:
        w = csv.writer(fp)
        w.writerow(["iteration", "epsilon", "space_bytes", "mean_time_s", "action"])
        w.writerows(rows)
