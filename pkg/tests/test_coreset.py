import itertools
import json
import math

import numpy as np
import pytest

from coreset_nas.coreset import (
    CoresetConfig,
    SelectionError,
    SelectionResult,
    covering_radius,
    exact_k_center,
    greedy_k_center,
    greedy_k_center_naive,
    greedy_k_center_trace,
    random_select,
    select_coreset,
    selection_count,
)
from coreset_nas.embedding_io import EmbeddedDataset, generate_synthetic
from coreset_nas.metrics import DistanceMetric


def brute_radius(points, centers):
    """Independent double loop in plain Python."""
    worst = 0.0
    for p in points:
        best = math.inf
        for c in centers:
            best = min(best, math.dist(p, points[c]))
        worst = max(worst, best)
    return worst


def brute_exact(points, k):
    best_r, best_set = math.inf, None
    for combo in itertools.combinations(range(len(points)), k):
        r = brute_radius(points, combo)
        if r < best_r:
            best_r, best_set = r, list(combo)
    return best_set, best_r


def random_instance(rng, n_max, d_max, integer=False):
    n = int(rng.integers(2, n_max + 1))
    d = int(rng.integers(1, d_max + 1))
    if integer:
        return rng.integers(-3, 4, size=(n, d)).astype(float)
    return rng.normal(size=(n, d))


def test_greedy_worked_example():
    # farthest from {0} is 10 (index 1); afterwards only index 2 remains
    assert greedy_k_center([0.0, 10.0, 3.0], [0], 2) == [1, 2]
    assert greedy_k_center([0.0, 10.0, 3.0], [0], 0) == []


def test_greedy_errors():
    with pytest.raises(SelectionError, match="exceeds"):
        greedy_k_center([0.0, 1.0], [0], 2)
    with pytest.raises(SelectionError, match="initial"):
        greedy_k_center([0.0, 1.0], [], 1)
    with pytest.raises(SelectionError, match="empty"):
        greedy_k_center(np.zeros((0, 2)), [0], 0)


def test_greedy_matches_naive_recompute():
    rng = np.random.default_rng(2024)
    for trial in range(200):
        # every other instance sits on an integer grid so exact ties occur
        pts = random_instance(rng, 40, 4, integer=trial % 2 == 1)
        n = len(pts)
        n0 = int(rng.integers(1, max(2, n // 3)))
        init = rng.choice(n, size=n0, replace=False).tolist()
        k = int(rng.integers(0, n - n0 + 1))
        assert greedy_k_center(pts, init, k) == greedy_k_center_naive(pts, init, k)


def test_greedy_naive_other_metrics():
    rng = np.random.default_rng(11)
    for metric in (DistanceMetric.SQUARED_EUCLIDEAN, DistanceMetric.COSINE):
        for _ in range(30):
            pts = rng.normal(size=(20, 3))
            assert greedy_k_center(pts, [3], 8, metric) == greedy_k_center_naive(pts, [3], 8, metric)


def test_greedy_monotone_max_min():
    rng = np.random.default_rng(3)
    for _ in range(50):
        pts = rng.normal(size=(60, 3))
        _, radii = greedy_k_center_trace(pts, [0], 40)
        assert all(b <= a for a, b in zip(radii, radii[1:]))


def test_trace_reports_euclidean_radii():
    order, radii = greedy_k_center_trace([0.0, 10.0, 3.0], [0], 2)
    assert order == [1, 2] and radii == [10.0, 3.0]


def test_covering_radius_examples():
    assert covering_radius([0.0, 4.0, 10.0], [0, 2]) == 4.0
    pts = np.random.default_rng(0).normal(size=(9, 2))
    assert covering_radius(pts, list(range(9))) == 0.0
    with pytest.raises(SelectionError):
        covering_radius(pts, [])


def test_covering_radius_matches_brute_force():
    rng = np.random.default_rng(8)
    for _ in range(100):
        pts = random_instance(rng, 25, 4)
        centers = rng.choice(len(pts), size=int(rng.integers(1, len(pts) + 1)), replace=False).tolist()
        assert covering_radius(pts, centers) == pytest.approx(brute_radius(pts.tolist(), centers), rel=1e-12)


def test_exact_examples():
    assert exact_k_center([0.0, 1.0, 10.0], 1) == ([1], 9.0)
    pts = np.random.default_rng(1).normal(size=(6, 2))
    assert exact_k_center(pts, 6)[1] == 0.0
    with pytest.raises(SelectionError, match="too large"):
        exact_k_center(np.zeros((17, 1)), 2)


def test_exact_ties_lexicographic():
    # {0,2}, {0,3}, {1,2}, {1,3} all reach radius 1; the lexicographically smallest wins
    pts = [0.0, 1.0, 2.0, 3.0]
    centers, r = exact_k_center(pts, 2)
    assert r == 1.0 and centers == brute_exact([[p] for p in pts], 2)[0] == [0, 2]


def test_exact_matches_independent_enumeration():
    rng = np.random.default_rng(77)
    for _ in range(40):
        pts = random_instance(rng, 9, 3)
        k = int(rng.integers(1, min(4, len(pts)) + 1))
        centers, r = exact_k_center(pts, k)
        b_centers, b_r = brute_exact(pts.tolist(), k)
        assert r == pytest.approx(b_r, rel=1e-12)
        assert centers == b_centers


def test_greedy_two_approximation():
    rng = np.random.default_rng(99)
    for _ in range(100):
        pts = random_instance(rng, 12, 3)
        k = int(rng.integers(1, min(4, len(pts)) + 1))
        first = int(rng.integers(len(pts)))
        centers = [first] + greedy_k_center(pts, [first], k - 1)
        _, opt = exact_k_center(pts, k)
        assert covering_radius(pts, centers) <= 2 * opt + 1e-12


def test_selection_count_rounding():
    assert selection_count(0.07, 100) == 7
    assert selection_count(0.1, 95) == 10
    assert selection_count(1.0, 13) == 13


def two_class_ds(per_class=50, seed=0):
    return generate_synthetic(2, per_class, 3, 1.0, 0.2, seed)


def check_invariants(ds, res, ratio):
    for c in range(ds.num_classes):
        sel, seeds = res.per_class_selected[c], res.per_class_seeds[c]
        assert not set(sel) & set(seeds)
        assert len(set(sel)) == len(sel)
        assert all(ds.labels[i] == c for i in sel + seeds)
        assert len(sel) == math.ceil(ratio * len(ds.class_indices(c)))


def test_select_coreset_contract():
    ds = two_class_ds()
    res = select_coreset(ds, CoresetConfig(ratio=0.1, seed=5))
    check_invariants(ds, res, 0.1)
    assert res.counts() == {0: 5, 1: 5}
    assert all(len(s) == 1 for s in res.per_class_seeds.values())
    for c in (0, 1):
        idx = ds.class_indices(c)
        local = {int(g): i for i, g in enumerate(idx)}
        centers = [local[i] for i in res.per_class_seeds[c] + res.per_class_selected[c]]
        assert res.objective_per_class[c] == pytest.approx(
            brute_radius(ds.vectors[idx].astype(float).tolist(), centers), rel=1e-12
        )


def test_select_coreset_capacity_check():
    ds = two_class_ds(per_class=10)
    with pytest.raises(SelectionError, match="class 0 has 10 items"):
        select_coreset(ds, CoresetConfig(ratio=1.0))
    with pytest.raises(SelectionError):
        CoresetConfig(ratio=0.0)
    with pytest.raises(SelectionError):
        CoresetConfig(ratio=1.5)


def test_select_coreset_deterministic_and_thread_independent():
    ds = generate_synthetic(5, 40, 4, 1.0, 0.2, seed=1)
    cfg = CoresetConfig(ratio=0.2, seed=3, seed_set_size=2)
    a = select_coreset(ds, cfg)
    b = select_coreset(ds, cfg, workers=4)
    assert a.to_dict() == b.to_dict()


def test_two_seeds_radii_within_factor_two():
    rng = np.random.default_rng(4)
    for trial in range(20):
        ds = EmbeddedDataset(rng.normal(size=(24, 2)), np.repeat([0, 1], 12), 2)
        r1 = select_coreset(ds, CoresetConfig(ratio=0.25, seed=trial))
        r2 = select_coreset(ds, CoresetConfig(ratio=0.25, seed=trial + 1000))
        for c in (0, 1):
            pts = ds.vectors[ds.class_indices(c)].astype(float)
            k = 1 + 3  # one seed plus ceil(0.25 * 12) selections
            _, opt = exact_k_center(pts, k)
            a, b = r1.objective_per_class[c], r2.objective_per_class[c]
            assert a <= 2 * opt + 1e-9 and b <= 2 * opt + 1e-9
            assert max(a, b) <= 2 * min(a, b) + 1e-9


def test_random_select():
    ds = generate_synthetic(3, 50, 2, 1.0, 0.0, seed=0)
    full = random_select(ds, 1.0, seed=0)
    for c in range(3):
        assert sorted(full.per_class_selected[c]) == ds.class_indices(c).tolist()
        assert full.per_class_seeds[c] == []
    assert random_select(ds, 0.2, 1).per_class_selected != random_select(ds, 0.2, 2).per_class_selected
    assert random_select(ds, 0.2, 1).to_dict() == random_select(ds, 0.2, 1).to_dict()
    with pytest.raises(SelectionError):
        random_select(ds, 0.0, 0)


@pytest.mark.parametrize("ratio,expected", [(0.02, 2), (0.05, 5), (0.10, 10), (0.50, 50)])
def test_random_counts_on_ratio_grid(ratio, expected):
    ds = generate_synthetic(2, 100, 2, 1.0, 0.0, seed=0)
    res = random_select(ds, ratio, seed=0)
    check_invariants(ds, res, ratio)
    assert res.counts() == {0: expected, 1: expected}


def test_coverage_dominates_random_in_low_dimension():
    # in the plane the planted outliers are isolated, so greedy should win every paired trial
    wins = 0
    for seed in range(100):
        ds = generate_synthetic(4, 100, 2, 1.0, 0.2, seed=seed)
        g = select_coreset(ds, CoresetConfig(ratio=0.1, seed=seed)).max_radius
        r = random_select(ds, 0.1, seed).max_radius
        wins += g < r
    assert wins == 100


def test_selection_json_round_trip(tmp_path):
    ds = two_class_ds()
    res = select_coreset(ds, CoresetConfig(ratio=0.1, seed=2, metric="squared_euclidean"))
    doc = res.to_dict()
    assert set(doc) >= {"ratio", "seed", "metric", "classes"}
    assert set(doc["classes"][0]) == {"class_id", "seeds", "selected", "covering_radius"}
    path = tmp_path / "sel.json"
    res.save(path)
    back = SelectionResult.load(path)
    assert back.to_dict() == json.loads(path.read_text())
    assert back.metric is DistanceMetric.SQUARED_EUCLIDEAN
    np.testing.assert_array_equal(back.indices(), res.indices())
