import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chansynth.metrics import as_samples, median_bandwidth, metric_record, mmd, wasserstein2
from chansynth.pbgc import flatten
from oracles import mmd_loop, w2_brute


def test_w2_trivial_cases():
    x = np.random.default_rng(0).normal(size=(6, 3))
    assert wasserstein2(x, x) == 0.0
    assert wasserstein2(x, x[::-1]) == 0.0
    assert wasserstein2([[0.0, 0.0]], [[3.0, 4.0]]) == pytest.approx(5.0)


@pytest.mark.parametrize("n", range(1, 8))
def test_w2_matches_permutation_search(n):
    rng = np.random.default_rng(n)
    a, b = rng.normal(size=(2, n, 4))
    assert wasserstein2(a, b) == pytest.approx(w2_brute(a.tolist(), b.tolist()), rel=1e-12)


def test_w2_errors():
    with pytest.raises(ValueError):
        wasserstein2(np.zeros((3, 2)), np.zeros((4, 2)))
    with pytest.raises(ValueError):
        wasserstein2(np.zeros((3, 2)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        wasserstein2(np.zeros((0, 2)), np.zeros((0, 2)))


def test_channel_stacks_are_flattened():
    rng = np.random.default_rng(1)
    h = rng.normal(size=(4, 2, 3)) + 1j * rng.normal(size=(4, 2, 3))
    g = rng.normal(size=(4, 2, 3)) + 1j * rng.normal(size=(4, 2, 3))
    assert wasserstein2(h, g) == wasserstein2(flatten(h), flatten(g))
    np.testing.assert_array_equal(as_samples(h), flatten(h))
    with pytest.raises(ValueError):
        as_samples(h[:, 0])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 2 ** 31))
def test_symmetry_and_nonnegativity(n, dim, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(2, n, dim))
    assert wasserstein2(a, b) == pytest.approx(wasserstein2(b, a), rel=1e-12, abs=1e-15)
    assert mmd(a, b) == pytest.approx(mmd(b, a), rel=1e-12, abs=1e-15)
    assert wasserstein2(a, b) >= 0 and mmd(a, b) >= 0


def test_w2_triangle_inequality():
    rng = np.random.default_rng(2)
    for _ in range(50):
        a, b, c = rng.normal(size=(3, 6, 3)) * rng.uniform(0.1, 3, (3, 1, 1))
        assert wasserstein2(a, c) <= wasserstein2(a, b) + wasserstein2(b, c) + 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_mmd_matches_double_loop(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(7, 3)), rng.normal(0.5, 1.0, size=(5, 3))
    bw = median_bandwidth(a, b)
    pooled = np.vstack([a, b]).tolist()
    dists = sorted(math.dist(pooled[i], pooled[j]) for i in range(12) for j in range(i + 1, 12))
    assert bw == pytest.approx((dists[32] + dists[33]) / 2, rel=1e-14)
    assert mmd(a, b) == pytest.approx(mmd_loop(a.tolist(), b.tolist(), bw), abs=1e-12)
    assert mmd(a, b, 0.3) == pytest.approx(mmd_loop(a.tolist(), b.tolist(), 0.3), abs=1e-12)


def test_mmd_identical_and_coincident_sets():
    x = np.random.default_rng(3).normal(size=(5, 2))
    assert mmd(x, x) == 0.0
    same = np.ones((4, 2))
    assert mmd(same, same) == 0.0


def test_mmd_separated_point_masses():
    a, b = np.zeros((4, 2)), np.full((4, 2), 100.0)
    # a bandwidth far below the separation drives the cross kernel to zero
    assert mmd(a, b, bandwidth=1.0) == pytest.approx(math.sqrt(2), abs=1e-12)
    # with equal set sizes the median distance is the separation itself
    assert median_bandwidth(a, b) == pytest.approx(100 * math.sqrt(2))
    assert mmd(a, b) == pytest.approx(math.sqrt(2 - 2 * math.exp(-0.5)), rel=1e-12)


def test_metric_records_are_json():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=(2, 5, 3))
    rec = json.loads(json.dumps(metric_record("mmd", a, b)))
    assert set(rec) == {"metric", "value", "n_a", "n_b", "bandwidth"}
    assert rec["value"] == mmd(a, b)
    assert set(metric_record("w2", a, b)) == {"metric", "value", "n_a", "n_b"}
    with pytest.raises(ValueError):
        metric_record("kl", a, b)
