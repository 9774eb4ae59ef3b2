"""Embedding: SMACOF convergence, Shepard placement, base-set sampling."""

import numpy as np
import pytest
from scipy.spatial import Delaunay

from evoscope.geometry import (
    MdsConfig,
    mds_fit,
    oos_place,
    oos_place_many,
    raw_stress,
    robust_minmax,
    stratified_sample,
)

# Enough budget to squeeze exactly-embeddable fixtures below 1e-6 stress;
# defaults stay at the coarser (300, 1e-3) production setting.
TIGHT = MdsConfig(max_iter=1000, eps=1e-15, seed=42)
# The collinear triple converges from any start, but a 10-point cloud can
# stall in a reflection local minimum for some starts; this seed converges
# globally on the seed-17 fixture (and its permutations).
TIGHT10 = MdsConfig(max_iter=1000, eps=1e-15, seed=1)


def euclidean(points):
    delta = points[:, None, :] - points[None, :, :]
    return np.sqrt((delta ** 2).sum(axis=2))


class TestMdsFit:
    def test_collinear_points_embed_exactly(self):
        dist = np.array([
            [0.0, 1.0, 2.0],
            [1.0, 0.0, 1.0],
            [2.0, 1.0, 0.0],
        ])
        model = mds_fit(dist, TIGHT)
        assert model.stress < 1e-6

    def test_two_points_one_apart(self):
        model = mds_fit(np.array([[0.0, 1.0], [1.0, 0.0]]), TIGHT)
        gap = np.linalg.norm(model.coords[0] - model.coords[1])
        assert gap == pytest.approx(1.0, abs=1e-6)

    def test_ten_point_recovery(self):
        rng = np.random.default_rng(17)
        points = rng.uniform(size=(10, 2))
        dist = euclidean(points)
        model = mds_fit(dist, TIGHT10)
        recovered = euclidean(model.coords)
        iu = np.triu_indices(10, k=1)
        rel = np.abs(recovered[iu] - dist[iu]) / dist[iu]
        assert rel.max() <= 1e-3

    def test_stress_history_monotone(self):
        rng = np.random.default_rng(5)
        dist = euclidean(rng.uniform(size=(12, 2)))
        model = mds_fit(dist, MdsConfig(max_iter=50, eps=1e-9, seed=3))
        hist = model.stress_history
        assert len(hist) == model.iterations
        assert all(b <= a + 1e-9 for a, b in zip(hist, hist[1:]))
        assert model.stress == hist[-1]
        assert raw_stress(dist, model.coords) == pytest.approx(model.stress)

    def test_permutation_leaves_final_stress_alone(self):
        # On an exactly embeddable configuration both orderings converge
        # to (numerically) zero stress.
        rng = np.random.default_rng(17)
        points = rng.uniform(size=(10, 2))
        dist = euclidean(points)
        perm = rng.permutation(10)
        a = mds_fit(dist, TIGHT10).stress
        b = mds_fit(dist[np.ix_(perm, perm)], TIGHT10).stress
        assert abs(a - b) < 1e-9

    def test_deterministic_given_config(self):
        rng = np.random.default_rng(2)
        dist = euclidean(rng.uniform(size=(8, 2)))
        a = mds_fit(dist, MdsConfig(seed=7))
        b = mds_fit(dist, MdsConfig(seed=7))
        assert np.array_equal(a.coords, b.coords)
        assert a.stress == b.stress

    def test_default_config_budget(self):
        cfg = MdsConfig()
        assert cfg.max_iter == 300
        assert cfg.eps == 1e-3
        rng = np.random.default_rng(9)
        dist = euclidean(rng.uniform(size=(15, 2)))
        model = mds_fit(dist)
        assert model.iterations <= 300

    def test_input_validation(self):
        with pytest.raises(ValueError):
            mds_fit(np.array([[0.0, 1.0], [2.0, 0.0]]))      # asymmetric
        with pytest.raises(ValueError):
            mds_fit(np.array([[0.0, -1.0], [-1.0, 0.0]]))    # negative
        with pytest.raises(ValueError):
            mds_fit(np.array([[1.0, 1.0], [1.0, 0.0]]))      # diagonal
        with pytest.raises(ValueError):
            mds_fit(np.zeros((1, 1)))                        # too small

    def test_ids_carried_through(self):
        dist = np.array([[0.0, 1.0], [1.0, 0.0]])
        model = mds_fit(dist, TIGHT, ids=["a", "b"])
        assert model.ids == ["a", "b"]


class TestOosPlace:
    def base(self):
        coords = np.array([
            [0.0, 0.0], [4.0, 0.0], [0.0, 4.0], [4.0, 4.0], [2.0, 2.0],
        ])
        return type("M", (), {"coords": coords})()

    def test_coincident_point_snaps_to_base(self):
        model = self.base()
        d = np.array([0.0, 5.0, 5.0, 7.0, 3.0])
        out = oos_place(d, model, k=3)
        assert np.linalg.norm(out - model.coords[0]) < 1e-6

    def test_k1_copies_nearest(self):
        model = self.base()
        out = oos_place(np.array([2.0, 1.0, 3.0, 4.0, 5.0]), model, k=1)
        assert np.allclose(out, model.coords[1])

    def test_equidistant_pair_lands_midway(self):
        model = self.base()
        out = oos_place(np.array([2.0, 2.0, 9.0, 9.0, 9.0]), model, k=2)
        assert np.allclose(out, (model.coords[0] + model.coords[1]) / 2)

    def test_result_in_hull_of_selected_bases(self):
        model = self.base()
        rng = np.random.default_rng(0)
        hull = Delaunay(model.coords)
        for _ in range(50):
            d = rng.uniform(0.1, 5.0, size=5)
            out = oos_place(d, model, k=4)
            assert hull.find_simplex(out) >= 0

    def test_k_larger_than_base_rejected(self):
        with pytest.raises(ValueError):
            oos_place(np.zeros(5), self.base(), k=6)

    def test_many_matches_scalar_path(self):
        model = self.base()
        rng = np.random.default_rng(1)
        d = rng.uniform(0.1, 5.0, size=(20, 5))
        batch = oos_place_many(d, model, k=3, block=7)
        single = np.array([oos_place(row, model, k=3) for row in d])
        assert np.allclose(batch, single)


class TestStratifiedSample:
    def test_small_corpus_passes_through(self):
        buckets = {("op", g): list(range(g * 1000, g * 1000 + 600)) for g in range(5)}
        out = stratified_sample(buckets)  # 3000 total, identity branch
        assert len(out) == 3000
        assert sorted(out) == sorted(i for ids in buckets.values() for i in ids)

    def test_bucket_cap_applies_when_large(self):
        buckets = {("op", 0): list(range(100))}
        out = stratified_sample(buckets, total_cap=99)
        assert len(out) == 60
        assert len(set(out)) == 60
        assert all(v in range(100) for v in out)

    def test_deterministic(self):
        buckets = {("a", g): list(range(g * 200, g * 200 + 150)) for g in range(40)}
        one = stratified_sample(buckets, seed=5)
        two = stratified_sample(buckets, seed=5)
        assert one == two
        other = stratified_sample(buckets, seed=6)
        assert one != other

    def test_small_buckets_survive_capping(self):
        buckets = {("a", 0): list(range(5000)), ("a", 1): [1, 2, 3]}
        out = stratified_sample(buckets)
        assert [v for v in out if v in (1, 2, 3)] == [1, 2, 3]
        assert len(out) == 63


class TestRobustMinmax:
    def test_outliers_clipped(self):
        v = np.concatenate([np.linspace(0, 1, 200), [1000.0]])
        out = robust_minmax(v)
        assert out.max() == 1.0
        assert out.min() == 0.0
        assert np.all((out >= 0.0) & (out <= 1.0))

    def test_constant_input(self):
        assert np.all(robust_minmax(np.full(10, 3.3)) == 0.0)
