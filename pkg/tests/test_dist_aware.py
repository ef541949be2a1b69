import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pgmkit import build
from pgmkit.datasets import generate, zipf_probs
from pgmkit.dist_aware import (QueryDistribution, band_errors, build_distribution_aware, entropy,
                               load_weighted_text, save_weighted_text, smooth, weighted_lookup,
                               weighted_lookup_many)
from pgmkit.errors import EpsilonError, InvalidProbabilityError, UnsortedInputError
from pgmkit.index import Router
from pgmkit.pla import build_optimal_pla

import helpers


def keys_n(n, seed=0):
    return np.sort(np.random.default_rng(seed).choice(10**9, n, replace=False)).astype(np.uint64)


def test_entropy_examples():
    assert entropy(QueryDistribution.uniform(np.arange(1024))) == pytest.approx(10.0, abs=1e-12)
    assert entropy(QueryDistribution([7], [1.0])) == 0.0
    assert QueryDistribution([1, 2, 3], [0.5, 0.25, 0.25]).entropy == pytest.approx(1.5, abs=1e-12)


@given(st.lists(st.floats(1e-3, 1.0), min_size=1, max_size=200))
def test_entropy_range(ws):
    d = QueryDistribution.from_weights(np.arange(len(ws)), ws)
    h = entropy(d)
    assert 0 <= h <= math.log2(len(ws)) + 1e-9


def test_distribution_validation():
    with pytest.raises(InvalidProbabilityError, match="invalid probability"):
        QueryDistribution([1, 2], [1.0, 0.0])
    with pytest.raises(InvalidProbabilityError):
        QueryDistribution([1, 2], [0.5, 0.4])
    with pytest.raises(UnsortedInputError):
        QueryDistribution([2, 2], [0.5, 0.5])
    with pytest.raises(InvalidProbabilityError):
        QueryDistribution.from_weights([1, 2], [1, 0])
    with pytest.raises(EpsilonError):
        build_distribution_aware(QueryDistribution.uniform([1, 2]), 0)


def test_smooth_makes_valid():
    w = smooth([0, 0, 5, 1])
    assert np.all(w > 0) and math.isclose(w.sum(), 1.0)
    QueryDistribution([1, 2, 3, 4], w)


def test_uniform_reproduces_plain_leaf():
    keys = keys_n(20000, 1)
    for eps in (8, 32):
        idx = build_distribution_aware(QueryDistribution.uniform(keys), eps)
        plain = build_optimal_pla(keys, eps)
        leaf = idx.levels[-1]
        assert np.array_equal(leaf.first_keys, plain.first_keys)
        assert np.array_equal(leaf.slopes, plain.slopes)
        assert np.array_equal(leaf.intercepts, plain.intercepts)
        assert idx.router == Router.WEIGHTED


def test_uniform_answers_match_plain_index():
    keys = keys_n(20000, 2)
    idx = build_distribution_aware(QueryDistribution.uniform(keys), 16)
    plain = build(keys, 16)
    qs = helpers.mixed_queries(keys, 20000, np.random.default_rng(3))
    k1, r1, _ = weighted_lookup_many(idx, qs)
    k2, r2 = plain.query_many(qs, 0)
    assert np.array_equal(k1, k2) and np.array_equal(r1, r2)


def heavy_key_dist(n, eps_seed=0):
    keys = keys_n(n, eps_seed)
    w = np.full(n, 0.5 / (n - 1))
    w[n // 3] = 0.5
    return QueryDistribution(keys, w / w.sum())


def test_heavy_key_window():
    d = heavy_key_dist(10**4)
    for eps in (1, 8, 64):
        idx = build_distribution_aware(d, eps)
        err = band_errors(idx, d)
        band = np.minimum(1 / d.probs, eps)
        assert np.all(np.abs(err) <= band + 1e-9)
        assert abs(err[10**4 // 3]) <= min(2, eps)


def test_heavy_key_probes_constant():
    probes = []
    for n in (10**3, 10**4, 10**5):
        d = heavy_key_dist(n)
        idx = build_distribution_aware(d, 64)
        res, steps = weighted_lookup(idx, int(d.keys[n // 3]))
        assert res.found and res.rank == n // 3
        probes.append(steps)
    assert max(probes) <= 16
    assert max(probes) - min(probes) <= 4


def test_band_adaptivity_zipf():
    keys = keys_n(10**5, 4)
    d = QueryDistribution(keys, zipf_probs(10**5, 1.0, 4))
    idx = build_distribution_aware(d, 64)
    err = band_errors(idx, d)
    assert np.all(np.abs(err) <= np.minimum(1 / d.probs, 64) + 1e-9)


@pytest.mark.parametrize("s", [0.5, 1.0, 1.5])
def test_space_within_extra_segments(s):
    keys = keys_n(10**5, 5)
    d = QueryDistribution(keys, zipf_probs(10**5, s, 5))
    eps = 32
    idx = build_distribution_aware(d, eps)
    uni = len(build_optimal_pla(keys, eps))
    assert len(idx.levels[-1]) <= uni + 2 * eps


@pytest.mark.parametrize("s", [0.0, 1.0, 2.0])
def test_weighted_lookup_matches_oracle(s):
    keys = keys_n(30000, 6)
    d = QueryDistribution(keys, zipf_probs(30000, s, 6) if s else np.full(30000, 1 / 30000))
    idx = build_distribution_aware(d, 16)
    qs = helpers.mixed_queries(keys, 30000, np.random.default_rng(7))
    k, r, steps = weighted_lookup_many(idx, qs)
    ek, er = helpers.expected(keys, qs, 0)
    assert np.array_equal(k, ek) and np.array_equal(r, er)
    assert np.all(steps > 0)


def test_scalar_weighted_lookup_out_of_range():
    d = QueryDistribution.uniform([10, 20, 30])
    idx = build_distribution_aware(d, 4)
    assert weighted_lookup(idx, 5)[0].kind.value == "absent_below_min"
    assert weighted_lookup(idx, -1)[0].kind.value == "absent_below_min"
    assert weighted_lookup(idx, 2**70)[0].rank == 2
    assert weighted_lookup(idx, 25)[0].rank == 1


def test_skewed_queries_need_fewer_probes():
    keys = np.unique(generate("lognormal_gaps", 10**5, seed=8))
    n = keys.shape[0]
    rng = np.random.default_rng(8)
    means = []
    for s in (2.0, 0.0):
        p = zipf_probs(n, s, 8) if s else np.full(n, 1.0 / n)
        d = QueryDistribution(keys, p / p.sum())
        idx = build_distribution_aware(d, 64)
        qs = keys[rng.choice(n, 10**5, p=d.probs)]
        means.append(weighted_lookup_many(idx, qs)[2].mean())
    assert means[0] < 0.8 * means[1]


def test_text_roundtrip(tmp_path):
    d = QueryDistribution.from_weights([1, 5, 9], [1, 2, 5])
    save_weighted_text(d, tmp_path / "w.tsv")
    back = load_weighted_text(tmp_path / "w.tsv")
    assert np.array_equal(back.keys, d.keys)
    assert np.allclose(back.probs, d.probs)


@given(st.lists(st.integers(0, 10**5), min_size=1, max_size=200, unique=True).map(sorted),
       st.data(), st.sampled_from([1, 2, 8, 32]))
def test_property_weighted(keys, data, eps):
    ws = data.draw(st.lists(st.floats(1e-4, 1.0), min_size=len(keys), max_size=len(keys)))
    d = QueryDistribution.from_weights(keys, ws)
    idx = build_distribution_aware(d, eps)
    err = band_errors(idx, d)
    assert np.all(np.abs(err) <= np.minimum(1 / d.probs, eps) + 1e-7)
    arr = np.array(keys, dtype=np.uint64)
    qs = np.arange(0, 10**5 + 2, 997, dtype=np.uint64)
    qs = np.concatenate([qs, arr])
    k, r, _ = weighted_lookup_many(idx, qs)
    ek, er = helpers.expected(arr, qs, 0)
    assert np.array_equal(k, ek) and np.array_equal(r, er)
    per = idx.stats()["segments_per_level"]
    assert per[0] == 1 and len(per) >= 2
