import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import kruskal_deaths, naive_persistence
from topobo.persistence import (
    PersistenceDiagram,
    PointCloud,
    SimplexBudgetError,
    cache_lookup,
    compute_h0,
    compute_h1,
    diagram_record,
    diameter_radius,
    enclosing_radius,
    read_cache,
    rips_edges,
    subsample_maxmin,
    write_cache,
)

SQUARE = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)


def as_pairs(d):
    return [tuple(p) for p in d.sorted_points().tolist()]


def circle(n, radius=1.0):
    t = 2 * np.pi * np.arange(n) / n
    return radius * np.column_stack([np.cos(t), np.sin(t)])


class TestEdges:
    def test_two_points(self):
        edges = rips_edges(np.array([[0, 0], [2, 0.0]]), 10)
        assert [(e.i, e.j, e.value) for e in edges] == [(0, 1, 1.0)]

    def test_threshold_excludes(self):
        assert rips_edges(np.array([[0, 0], [2, 0.0]]), 0.5) == []

    def test_unit_square(self):
        vals = [e.value for e in rips_edges(SQUARE, 10)]
        assert len(vals) == 6
        assert vals[:4] == [0.5] * 4
        assert vals[4:] == pytest.approx([math.sqrt(2) / 2] * 2)

    def test_sorted_with_lexicographic_ties(self):
        edges = rips_edges(SQUARE, 10)
        keys = [(e.value, e.i, e.j) for e in edges]
        assert keys == sorted(keys)

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            rips_edges(np.array([[0, np.nan], [1, 1]]), 1.0)

    def test_cloud_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            PointCloud("bad", [[0, np.inf]])


class TestEnclosingRadius:
    def test_single_point(self):
        assert enclosing_radius(np.zeros((1, 2))) == 0

    def test_two_points(self):
        assert enclosing_radius(np.array([[0, 0], [2, 0.0]])) == 1.0

    def test_square(self):
        assert enclosing_radius(SQUARE) == pytest.approx(math.sqrt(2) / 2)


class TestH0:
    def test_two_points(self):
        assert as_pairs(compute_h0(np.array([[0, 0], [2, 0.0]]))) == [(0.0, 1.0)]

    def test_square(self):
        assert as_pairs(compute_h0(SQUARE)) == [(0.0, 0.5)] * 3

    def test_square_matches_kruskal(self):
        d = compute_h0(SQUARE)
        assert sorted(d.points[:, 1]) == kruskal_deaths(SQUARE)

    def test_identical_points_have_no_persistence(self):
        # merges at radius 0 are zero-persistence pairs and are dropped
        assert len(compute_h0(np.zeros((5, 2)))) == 0

    def test_truncation_leaves_components_essential(self):
        pts = np.array([[0, 0], [1, 0], [10, 0], [11, 0.0]])
        assert as_pairs(compute_h0(pts, max_radius=1.0)) == [(0.0, 0.5), (0.0, 0.5)]

    def test_bad_radius(self):
        with pytest.raises(ValueError):
            compute_h0(SQUARE, max_radius=0.0)

    def test_random_matches_kruskal(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            pts = rng.random((rng.integers(2, 40), 3))
            assert sorted(compute_h0(pts).points[:, 1]) == kruskal_deaths(pts)


class TestH1:
    def test_square(self):
        pairs = as_pairs(compute_h1(SQUARE))
        assert len(pairs) == 1
        assert pairs[0][0] == 0.5
        assert pairs[0][1] == pytest.approx(math.sqrt(2) / 2)

    def test_square_matches_naive(self):
        r = enclosing_radius(SQUARE)
        assert as_pairs(compute_h1(SQUARE)) == naive_persistence(SQUARE, r)[1]

    def test_collinear_is_empty(self):
        pts = np.array([[0, 0], [1, 0], [2, 0.0]])
        assert len(compute_h1(pts, max_radius=10)) == 0
        assert naive_persistence(pts, 10)[1] == []

    def test_circle_single_loop(self):
        pts = circle(20)
        d = compute_h1(pts)
        assert len(d) == 1
        r = enclosing_radius(pts)
        assert as_pairs(d) == naive_persistence(pts, r)[1]
        # born at the side length, dies once triangles reach across the circle
        birth, death = d.points[0]
        assert birth == pytest.approx(np.sin(np.pi / 20))
        assert 0.5 < death <= 1.0

    def test_below_first_cycle_edge(self):
        assert len(compute_h1(SQUARE, max_radius=0.49)) == 0

    def test_truncation_before_death_makes_class_essential(self):
        # the loop is born at 0.5 and would die at sqrt(2)/2
        assert len(compute_h1(SQUARE, max_radius=0.6)) == 0

    def test_budget(self):
        with pytest.raises(SimplexBudgetError, match="subsample"):
            compute_h1(np.random.default_rng(0).random((50, 2)), simplex_budget=100)

    def test_tiny_clouds(self):
        assert len(compute_h1(np.zeros((1, 2)))) == 0
        assert len(compute_h1(np.array([[0, 0], [1, 1.0]]))) == 0


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(3, 14),
    d=st.integers(1, 3),
    seed=st.integers(0, 2**32 - 1),
    frac=st.floats(0.2, 1.0),
)
def test_oracle_equivalence_property(n, d, seed, frac):
    pts = np.random.default_rng(seed).random((n, d))
    r = diameter_radius(pts) * frac
    h0, h1 = naive_persistence(pts, r)
    assert as_pairs(compute_h0(pts, r)) == h0
    assert as_pairs(compute_h1(pts, r)) == h1


def test_oracle_equivalence_on_lattice_ties():
    # many equal distances stress the tie-breaking order
    g = np.array([[i, j] for i in range(4) for j in range(4)], dtype=float)
    r = diameter_radius(g)
    h0, h1 = naive_persistence(g, r)
    assert as_pairs(compute_h0(g)) == h0
    assert as_pairs(compute_h1(g, r)) == h1


def test_h0_stability_under_perturbation():
    rng = np.random.default_rng(11)
    for _ in range(20):
        pts = rng.random((25, 2))
        eps = 1e-3
        moved = pts + rng.uniform(-eps, eps, pts.shape)
        a = np.sort(compute_h0(pts).points[:, 1])
        b = np.sort(compute_h0(moved).points[:, 1])
        # each coordinate moves by eps, so each distance by at most 2*sqrt(2)*eps
        assert np.max(np.abs(a - b)) <= np.sqrt(2) * eps + 1e-12


def test_determinism():
    pts = np.random.default_rng(5).random((60, 2))
    a, b = compute_h1(pts), compute_h1(pts)
    assert a.points.tobytes() == b.points.tobytes()


class TestSubsample:
    def test_full(self):
        c = PointCloud("c", np.random.default_rng(0).random((12, 2)), 1.5)
        s = subsample_maxmin(c, 12, seed=4)
        assert sorted(map(tuple, s.points)) == sorted(map(tuple, c.points))
        assert s.id == "c" and s.label == 1.5

    def test_one(self):
        c = PointCloud("c", np.random.default_rng(0).random((12, 2)))
        s = subsample_maxmin(c, 1, seed=9)
        start = np.random.default_rng(9).integers(12)
        assert np.array_equal(s.points, c.points[[start]])

    @pytest.mark.parametrize("seed", range(12))
    def test_square_picks_diagonal(self, seed):
        s = subsample_maxmin(PointCloud("sq", SQUARE), 2, seed=seed)
        a, b = s.points
        assert np.linalg.norm(a - b) == pytest.approx(math.sqrt(2))

    def test_zero_rejected(self):
        with pytest.raises(ValueError):
            subsample_maxmin(PointCloud("sq", SQUARE), 0)

    def test_deterministic(self):
        c = PointCloud("c", np.random.default_rng(1).random((100, 2)))
        assert np.array_equal(subsample_maxmin(c, 10, 3).points, subsample_maxmin(c, 10, 3).points)


def test_diagram_validation():
    with pytest.raises(ValueError):
        PersistenceDiagram(1, [[0.5, 0.5]])
    with pytest.raises(ValueError):
        PersistenceDiagram(2, [])
    with pytest.raises(ValueError):
        PersistenceDiagram(0, [[0, np.inf]])


def test_cache_roundtrip(tmp_path):
    d = compute_h1(SQUARE)
    path = tmp_path / "pds.jsonl"
    write_cache(path, [diagram_record("sq", d, 0.75, subsample=None)])
    line = json.loads(path.read_text().splitlines()[0])
    assert set(line) >= {"id", "degree", "points", "max_radius"}
    recs = read_cache(path)
    hit = cache_lookup(recs, "sq", 1, 0.75)
    assert hit is not None and np.array_equal(hit.points, d.points)
    assert cache_lookup(recs, "sq", 1, 0.8) is None
    assert cache_lookup(recs, "sq", 0, 0.75) is None
