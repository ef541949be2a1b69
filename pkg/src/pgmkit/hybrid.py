"""Piecewise nonlinear approximation by top-down regression.

A range is fitted by the simplest family member that keeps every floored
prediction within ``epsilon`` of the true rank; otherwise it is split and the
parts are processed in turn. A final left-to-right pass merges neighbours when
the more complex of the two can cover both.

Inputs are fitted on a local coordinate ``t = (k - first_key) / span`` so
polynomial fits stay well conditioned.
"""
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import EpsilonError
from .keys import as_keys, distinct_with_ranks

STRATEGIES = ("midpoint", "random", "argmax", "longest_chain")


def _local_t(keys, first_key, inv_span):
    keys = np.asarray(keys)
    if keys.dtype.kind == "u":
        fk = np.uint64(first_key)
        d = np.where(keys >= fk, (keys - fk).astype(np.float64), -((fk - keys).astype(np.float64)))
    else:
        d = keys.astype(np.float64) - float(first_key)
    return d * inv_span


# ---------------------------------------------------------------------------
# family members


@dataclass(frozen=True)
class ModelSpec:
    name: str
    n_params: int
    fit: object = field(repr=False)
    eval: object = field(repr=False)


def _poly_member(deg, name):
    def fit(t, y):
        d = min(deg, t.shape[0] - 1)
        if d <= 0:
            c = np.array([float(np.mean(y))])
        else:
            with warnings.catch_warnings():
                # near-degenerate spans; the validity check decides acceptance
                warnings.simplefilter("ignore", np.exceptions.RankWarning)
                c = np.polynomial.polynomial.polyfit(t, y, d)
        out = np.zeros(deg + 1)
        out[: c.shape[0]] = c
        return out

    def ev(params, t):
        return np.polynomial.polynomial.polyval(t, params)

    return ModelSpec(name, deg + 1, fit, ev)


MLP_HIDDEN = 4
MLP_STEPS = 2000
MLP_LR = 0.05


def _mlp_eval_norm(w, t):
    h = MLP_HIDDEN
    hid = np.tanh(np.outer(t, w[:h]) + w[h:2 * h])
    return hid @ w[2 * h:3 * h] + w[3 * h]


def _mlp_fit(t, y, seed=0):
    """One hidden tanh layer, full-batch Adam from a fixed seed."""
    y0 = float(y[0])
    ys = float(y[-1] - y[0]) or 1.0
    u = (y - y0) / ys
    h = MLP_HIDDEN
    rng = np.random.default_rng(seed)
    w = np.concatenate([rng.normal(0, 2, h), rng.normal(0, 1, h), rng.normal(0, 0.5, h), [0.0]])
    m = np.zeros_like(w)
    v = np.zeros_like(w)
    n = t.shape[0]
    for step in range(1, MLP_STEPS + 1):
        pre = np.outer(t, w[:h]) + w[h:2 * h]
        hid = np.tanh(pre)
        r = (hid @ w[2 * h:3 * h] + w[3 * h] - u) * (2.0 / n)
        dh = np.outer(r, w[2 * h:3 * h]) * (1 - hid * hid)
        g = np.concatenate([t @ dh, dh.sum(0), hid.T @ r, [r.sum()]])
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - MLP_LR * (m / (1 - 0.9**step)) / (np.sqrt(v / (1 - 0.999**step)) + 1e-12)
    return np.concatenate([[y0, ys], w])


def _mlp_member():
    def ev(params, t):
        return params[0] + params[1] * _mlp_eval_norm(params[2:], t)

    return ModelSpec("mlp4", 3 * MLP_HIDDEN + 1, _mlp_fit, ev)


LINEAR = _poly_member(1, "linear")
QUADRATIC = _poly_member(2, "quadratic")
CUBIC = _poly_member(3, "cubic")
MLP = _mlp_member()


class ModelFamily:
    """Ordered model specs, simplest first; the first must be linear."""

    def __init__(self, members):
        members = list(members)
        if not members:
            raise ValueError("model family must not be empty")
        if members[0].name != "linear":
            raise ValueError("the first family member must be the linear model")
        if any(a.n_params > b.n_params for a, b in zip(members, members[1:])):
            raise ValueError("family members must be sorted by parameter count")
        self.members = members

    @classmethod
    def default(cls, with_mlp=False):
        return cls([LINEAR, QUADRATIC, CUBIC] + ([MLP] if with_mlp else []))

    @classmethod
    def linear_only(cls):
        return cls([LINEAR])

    def __len__(self):
        return len(self.members)

    def __getitem__(self, i):
        return self.members[i]


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Piece:
    first_key: object
    member: int
    params: np.ndarray
    inv_span: float
    start: int
    stop: int  # inclusive, index into the distinct keys

    def raw(self, family, keys):
        return family[self.member].eval(self.params, _local_t(keys, self.first_key, self.inv_span))


@dataclass(frozen=True)
class PNAModel:
    pieces: tuple
    epsilon: int
    family: ModelFamily = field(repr=False)

    def __len__(self):
        return len(self.pieces)

    @property
    def first_keys(self):
        return [p.first_key for p in self.pieces]

    @property
    def space(self):
        """Total parameter count over all pieces."""
        return sum(self.family[p.member].n_params for p in self.pieces)

    def predict(self, keys):
        keys = as_keys(keys, require_sorted=False)
        fks = np.array(self.first_keys, dtype=keys.dtype)
        seg = np.maximum(np.searchsorted(fks, keys, side="right") - 1, 0)
        out = np.empty(keys.shape[0], dtype=np.int64)
        for s in np.unique(seg):
            mask = seg == s
            out[mask] = np.floor(self.pieces[s].raw(self.family, keys[mask])).astype(np.int64)
        return out

    def max_error(self, keys):
        keys = as_keys(keys)
        xs, ranks = distinct_with_ranks(keys)
        return int(np.max(np.abs(self.predict(xs) - ranks)))


def _fit_piece(family, member, xs, ys, a, b):
    fk = xs[a]
    span = float(xs[b] - xs[a])
    inv = 1.0 / span if span > 0 else 0.0
    t = _local_t(xs[a:b + 1], fk, inv)
    params = family[member].fit(t, ys[a:b + 1])
    return Piece(fk, member, params, inv, a, b)


def compute_errors(keys, rng, model, family=None, ranks=None):
    """Floored absolute rank errors of ``model`` over ``keys[a..b]`` (inclusive).

    ``model`` is either a callable returning real predictions or a Piece (then
    ``family`` is required). ``ranks`` defaults to the array positions.
    """
    a, b = rng
    ks = np.asarray(keys)[a:b + 1]
    r = np.arange(a, b + 1) if ranks is None else np.asarray(ranks)[a:b + 1]
    if isinstance(model, Piece):
        pred = model.raw(family, ks)
    else:
        pred = np.asarray(model(ks), dtype=np.float64)
    return np.abs(np.floor(pred).astype(np.int64) - r)


def choose_breakpoint(errors, epsilon, strategy="longest_chain", a=0, rng=None):
    """Split positions (absolute, offset by ``a``) for a range that failed.

    One position ``p`` splits ``[a, b]`` into ``[a, p]`` and ``[p + 1, b]``.
    Two positions ``(s, e)`` split it into ``[a, s - 1]``, ``[s, e]`` and
    ``[e + 1, b]``.
    """
    errors = np.asarray(errors)
    n = errors.shape[0]
    b = a + n - 1
    if strategy == "midpoint":
        return ((a + b) // 2,)
    if strategy == "random":
        if rng is None:
            rng = np.random.default_rng(0)
        if n <= 2:
            return (a,)
        return (int(rng.integers(a + 1, b)),)
    if strategy == "argmax":
        p = a + int(np.argmax(errors))
        return (min(p, b - 1),)
    if strategy == "longest_chain":
        bad = np.concatenate([[False], errors > epsilon, [False]])
        edges = np.flatnonzero(bad[1:] != bad[:-1])
        starts, ends = edges[0::2], edges[1::2] - 1
        if starts.shape[0] == 0:
            return ((a + b) // 2,)
        i = int(np.argmax(ends - starts))
        return (a + int(starts[i]), a + int(ends[i]))
    raise ValueError(f"unknown breakpoint strategy {strategy!r}")


def _subranges(a, b, bps):
    if len(bps) == 1:
        p = bps[0]
        parts = [(a, p), (p + 1, b)]
    else:
        s, e = bps
        parts = [(a, s - 1), (s, e), (e + 1, b)]
    parts = [(x, y) for x, y in parts if x <= y]
    if len(parts) < 2:
        p = (a + b) // 2
        parts = [(a, p), (p + 1, b)]
    return parts


def _max_err(piece, family, xs, ys):
    a, b = piece.start, piece.stop
    return int(np.max(np.abs(np.floor(piece.raw(family, xs[a:b + 1])).astype(np.int64) - ys[a:b + 1].astype(np.int64))))


def top_down_regression(keys, epsilon, family=None, strategy="longest_chain", seed=0, merge_pass=True):
    """PNA-model whose floored predictions are within ``epsilon`` of every rank."""
    if isinstance(epsilon, bool) or not isinstance(epsilon, (int, np.integer)) or epsilon < 1:
        raise EpsilonError(epsilon)
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown breakpoint strategy {strategy!r}")
    family = family or ModelFamily.default()
    xs, ranks = distinct_with_ranks(as_keys(keys))
    ys = ranks.astype(np.float64)
    rng = np.random.default_rng(seed)
    pieces = []
    stack = [(0, xs.shape[0] - 1)]
    while stack:
        a, b = stack.pop()
        errs0 = None
        for mi in range(len(family)):
            piece = _fit_piece(family, mi, xs, ys, a, b)
            errs = compute_errors(xs, (a, b), piece, family, ranks)
            if mi == 0:
                errs0 = errs
            if errs.max() <= epsilon:
                pieces.append(piece)
                break
        else:
            if a == b:
                raise RuntimeError("single point could not be fitted")
            parts = _subranges(a, b, choose_breakpoint(errs0, epsilon, strategy, a, rng))
            stack.extend(reversed(parts))
    model = PNAModel(tuple(pieces), int(epsilon), family)
    if merge_pass:
        model = merge(model, keys, epsilon)
    return model


def merge(model, keys, epsilon):
    """Left-to-right merge of neighbours, refitting with the more complex member."""
    family = model.family
    xs, ranks = distinct_with_ranks(as_keys(keys))
    ys = ranks.astype(np.float64)
    out = []
    cur = None
    for p in model.pieces:
        if cur is None:
            cur = p
            continue
        member = max(cur.member, p.member)
        cand = _fit_piece(family, member, xs, ys, cur.start, p.stop)
        if _max_err(cand, family, xs, ranks) <= epsilon:
            cur = cand
        else:
            out.append(cur)
            cur = p
    if cur is not None:
        out.append(cur)
    return PNAModel(tuple(out), int(epsilon), family)


def pieces_from_splits(keys, splits, family=None):
    """Linear pieces over ``keys`` cut at the given start indices (for tests)."""
    family = family or ModelFamily.linear_only()
    xs, ranks = distinct_with_ranks(as_keys(keys))
    ys = ranks.astype(np.float64)
    bounds = [0] + sorted(set(int(s) for s in splits if 0 < s < xs.shape[0])) + [xs.shape[0]]
    pieces = tuple(_fit_piece(family, 0, xs, ys, a, b - 1) for a, b in zip(bounds, bounds[1:]))
    return PNAModel(pieces, 0, family)
