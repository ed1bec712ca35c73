"""Quantizer training, projection, and the nearest-neighbor index."""
import math

import numpy as np
import pytest

from oracles import exp_lloyd_optimal

from lobmm.quantize import (
    NnIndex,
    QuantGrid,
    clvq_train,
    distortion,
    exponential_sampler,
    grid_from_csv,
    grid_to_csv,
    knn_weights,
    lloyd_sweeps,
    project,
)


class TestCLVQ:
    def test_single_point_is_mean(self):
        grid = clvq_train(exponential_sampler(), 1, 2000, seed=0)
        assert grid.flat_points()[0, 0] == pytest.approx(1.0, abs=1e-2)
        assert grid.weights.sum() == pytest.approx(1.0, abs=1e-12)

    def test_weights_sum_to_one(self):
        grid = clvq_train(exponential_sampler(), 12, 20_000, seed=1)
        assert grid.weights.sum() == pytest.approx(1.0, abs=1e-12)
        assert (grid.weights > 0).all()

    def test_matches_dense_lloyd_oracle(self):
        grid = clvq_train(exponential_sampler(), 10, 60_000, seed=2,
                          lloyd_sample=400_000)
        _, d_opt = exp_lloyd_optimal(10)
        rng = np.random.default_rng(3)
        d_emp = distortion(grid, rng.exponential(1.0, 400_000))
        assert d_emp <= d_opt * 1.05

    def test_lloyd_never_increases_distortion(self):
        rng = np.random.default_rng(4)
        sample = rng.exponential(1.0, 30_000)
        pts = rng.exponential(1.0, 8)
        prev = None
        cur = pts.copy()
        for _ in range(12):
            cur, _ = lloyd_sweeps(cur, sample, 1, rng)
            d = distortion(QuantGrid(points=np.sort(cur.ravel()),
                                     weights=np.full(8, 1 / 8)), sample)
            if prev is not None:
                assert d <= prev + 1e-12
            prev = d

    def test_distortion_zero_on_support(self):
        grid = QuantGrid(points=np.array([0.0, 1.0, 2.0]),
                         weights=np.array([0.3, 0.3, 0.4]))
        sample = np.array([0.0, 1.0, 2.0, 1.0])
        assert distortion(grid, sample) == 0.0

    def test_zador_rate_one_dimensional(self):
        sampler = exponential_sampler()
        vals = []
        for K in (8, 16, 32, 64):
            grid = clvq_train(sampler, K, 60_000, seed=10 + K,
                              lloyd_sample=300_000)
            rng = np.random.default_rng(100 + K)
            rms = math.sqrt(distortion(grid, rng.exponential(1.0, 300_000)))
            vals.append(K * rms)
        mean = sum(vals) / len(vals)
        assert max(abs(v - mean) for v in vals) / mean <= 0.2


class TestProjection:
    def test_grid_point_maps_to_itself(self):
        idx = NnIndex.build(np.array([[0.0, 0.0], [1.0, 2.0], [3.0, 1.0]]))
        i, pt = project(np.array([1.0, 2.0]), idx)
        assert i == 1 and (pt == [1.0, 2.0]).all()

    def test_midpoint_rule_one_d(self):
        idx = NnIndex.build(np.array([[0.0], [1.0]]))
        assert project(np.array([0.4]), idx)[0] == 0
        assert project(np.array([0.6]), idx)[0] == 1

    def test_tie_breaks_to_lowest_index(self):
        idx = NnIndex.build(np.array([[0.0], [1.0]]))
        assert project(np.array([0.5]), idx)[0] == 0
        dup = NnIndex.build(np.array([[2.0], [2.0], [0.0]]))
        assert dup.query_batch(np.array([[1.9]]))[0] == 0

    def test_exact_matches_linear_scan(self):
        rng = np.random.default_rng(6)
        pts = rng.normal(size=(300, 4))
        scales = np.array([1.0, 2.0, 0.5, 1.0])
        idx = NnIndex.build(pts, scales)
        queries = rng.normal(size=(1000, 4))
        got = idx.query_batch(queries)
        d2 = (((queries[:, None, :] - pts[None, :, :]) * scales) ** 2).sum(axis=2)
        want = d2.argmin(axis=1)
        assert (got == want).all()

    def test_voronoi_inclusion(self):
        rng = np.random.default_rng(7)
        pts = rng.normal(size=(50, 3))
        idx = NnIndex.build(pts)
        for _ in range(200):
            q = rng.normal(size=3)
            i, pt = project(q, idx)
            dist = np.linalg.norm(q - pt)
            others = np.linalg.norm(pts - q, axis=1)
            assert dist <= others.min() + 1e-12

    def test_approximate_recall(self):
        rng = np.random.default_rng(8)
        pts = rng.normal(size=(20_000, 6))
        exact = NnIndex.build(pts)
        approx = NnIndex.build(pts, approx_eps=0.5)
        queries = rng.normal(size=(10_000, 6))
        recall = (exact.query_batch(queries)
                  == approx.query_batch(queries, approx=True)).mean()
        assert recall >= 0.95

    def test_zero_scale_drops_dimension(self):
        pts = np.array([[0.0, 5.0], [1.0, -100.0]])
        idx = NnIndex.build(pts, scales=np.array([1.0, 0.0]))
        assert idx.query_batch(np.array([[0.2, 999.0]]))[0] == 0


class TestKnnWeights:
    def test_degenerates_to_projection(self):
        idx = NnIndex.build(np.array([[0.0], [1.0], [3.0]]))
        ws = knn_weights(np.array([0.8]), idx, 1)
        assert ws == [(1, 1.0)]

    def test_equidistant_pair_splits_evenly(self):
        idx = NnIndex.build(np.array([[0.0], [1.0], [5.0]]))
        ws = dict(knn_weights(np.array([0.5]), idx, 2))
        assert ws[0] == pytest.approx(0.5) and ws[1] == pytest.approx(0.5)

    def test_weights_sum_to_one(self):
        rng = np.random.default_rng(9)
        idx = NnIndex.build(rng.normal(size=(40, 2)))
        for _ in range(30):
            ws = knn_weights(rng.normal(size=2), idx, 5)
            assert sum(w for _, w in ws) == pytest.approx(1.0, abs=1e-12)

    def test_exact_hit_takes_all_mass(self):
        idx = NnIndex.build(np.array([[0.0], [1.0], [3.0]]))
        ws = dict(knn_weights(np.array([1.0]), idx, 3))
        assert ws[1] == 1.0


class TestPersistence:
    def test_csv_roundtrip(self, tmp_path):
        grid = clvq_train(exponential_sampler(), 6, 5000, seed=11)
        path = str(tmp_path / "grid.csv")
        grid_to_csv(grid, path)
        back = grid_from_csv(path)
        assert np.allclose(back.flat_points(), grid.flat_points(), atol=0, rtol=0)
        assert np.allclose(back.weights, grid.weights, atol=1e-15)

    def test_validation(self):
        with pytest.raises(ValueError):
            QuantGrid(points=np.array([0.0, 0.0]), weights=np.array([0.5, 0.5]))
        with pytest.raises(ValueError):
            QuantGrid(points=np.array([0.0, 1.0]), weights=np.array([0.6, 0.6]))
