"""Optimal vector quantization (CLVQ + Lloyd) and nearest-neighbor search.

The quantizer trains grids for scalar or vector noise distributions; the
index provides exact and approximate nearest-neighbor projection under a
weighted Euclidean metric (per-dimension scale factors).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from lobmm.errors import EmptyCell

Sampler = Callable[[int, np.random.Generator], np.ndarray]


def exponential_sampler(scale: float = 1.0) -> Sampler:
    def draw(n, rng):
        return rng.exponential(scale, size=n)
    return draw


@dataclass(frozen=True)
class QuantGrid:
    """Grid points with their Voronoi-cell probability weights."""
    points: np.ndarray   # [K] or [K, d]
    weights: np.ndarray  # [K], sums to one

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if (w < 0).any() or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be non-negative and sum to 1")
        pts = np.atleast_2d(np.asarray(self.points, dtype=float).reshape(len(w), -1))
        if len(np.unique(pts, axis=0)) != len(pts):
            raise ValueError("grid points must be pairwise distinct")

    @property
    def size(self) -> int:
        return len(self.weights)

    def flat_points(self) -> np.ndarray:
        return np.asarray(self.points, dtype=float).reshape(self.size, -1)


def _assign(sample2d: np.ndarray, pts2d: np.ndarray) -> np.ndarray:
    """Nearest-centroid labels, chunked to bound memory."""
    n = len(sample2d)
    out = np.empty(n, dtype=np.int64)
    step = max(1, 8_000_000 // max(1, len(pts2d)))
    for lo in range(0, n, step):
        chunk = sample2d[lo:lo + step]
        d2 = ((chunk[:, None, :] - pts2d[None, :, :]) ** 2).sum(axis=2)
        out[lo:lo + step] = d2.argmin(axis=1)
    return out


def lloyd_sweeps(points: np.ndarray, sample: np.ndarray, sweeps: int,
                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Fixed-sample Lloyd iterations; empty cells re-seed at a random
    sample point (which can only shrink the distortion).  Stops early
    once the grid is stationary.  Scalar grids use a sorted prefix-sum
    sweep; higher dimensions a chunked assignment."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] == 1 and pts.shape[1] > 1 and np.ndim(points) == 1:
        pts = pts.T
    sample2d = np.asarray(sample, dtype=float)
    if sample2d.ndim == 1:
        sample2d = sample2d[:, None]
        pts = pts.reshape(-1, 1)
    if sample2d.shape[1] == 1:
        return _lloyd_1d(pts[:, 0], sample2d[:, 0], sweeps, rng)
    for _ in range(sweeps):
        labels = _assign(sample2d, pts)
        moved = 0.0
        for k in range(len(pts)):
            mask = labels == k
            new = (sample2d[rng.integers(len(sample2d))] if not mask.any()
                   else sample2d[mask].mean(axis=0))
            moved = max(moved, float(np.abs(new - pts[k]).max()))
            pts[k] = new
        if moved < 1e-12:
            break
    labels = _assign(sample2d, pts)
    counts = np.bincount(labels, minlength=len(pts)).astype(float)
    return pts, counts / counts.sum()


def _lloyd_1d(pts: np.ndarray, sample: np.ndarray,
              sweeps: int, rng: np.random.Generator):
    xs = np.sort(sample)
    csum = np.concatenate([[0.0], np.cumsum(xs)])
    pts = np.sort(pts.astype(float))
    n = len(xs)
    for _ in range(sweeps):
        edges = 0.5 * (pts[1:] + pts[:-1])
        cuts = np.concatenate([[0], np.searchsorted(xs, edges), [n]])
        counts = np.diff(cuts)
        sums = csum[cuts[1:]] - csum[cuts[:-1]]
        new = pts.copy()
        nonempty = counts > 0
        new[nonempty] = sums[nonempty] / counts[nonempty]
        if (~nonempty).any():
            new[~nonempty] = xs[rng.integers(n, size=int((~nonempty).sum()))]
            new = np.sort(new)
        moved = np.abs(new - pts).max()
        pts = new
        if moved < 1e-12:
            break
    edges = 0.5 * (pts[1:] + pts[:-1])
    cuts = np.concatenate([[0], np.searchsorted(xs, edges), [n]])
    weights = np.diff(cuts).astype(float)
    return pts[:, None], weights / weights.sum()


def clvq_train(sampler: Sampler, K: int, steps: int, seed: int,
               lloyd_sample: int = 200_000, lloyd_iters: int = 4000) -> QuantGrid:
    """Competitive-learning VQ followed by Lloyd refinement on a frozen
    sample; weights are the final empirical cell masses."""
    if K < 1 or steps < 1:
        raise ValueError("K >= 1 and steps >= 1 required")
    rng = np.random.default_rng(seed)
    init = np.asarray(sampler(K, rng), dtype=float)
    pts = np.atleast_2d(init.reshape(K, -1)).astype(float)
    scalar = pts.shape[1] == 1
    if scalar:
        pts = pts[np.argsort(pts[:, 0])]
    batch = 1024
    t = 0
    while t < steps:
        xs = np.asarray(sampler(min(batch, steps - t), rng), dtype=float).reshape(-1, pts.shape[1])
        for x in xs:
            i = int(((pts - x) ** 2).sum(axis=1).argmin())
            gamma = 1.0 / (20.0 + 0.5 * t)
            pts[i] += gamma * (x - pts[i])
            t += 1
    frozen = np.asarray(sampler(lloyd_sample, rng), dtype=float).reshape(-1, pts.shape[1])
    pts, weights = lloyd_sweeps(pts, frozen, lloyd_iters, rng)
    if (weights == 0).any():
        raise EmptyCell("a quantizer cell kept zero mass after re-seeding")
    order = np.lexsort(pts.T[::-1])
    pts, weights = pts[order], weights[order]
    weights = weights / weights.sum()
    points = pts[:, 0] if scalar else pts
    return QuantGrid(points=points, weights=weights)


def distortion(grid: QuantGrid, sample: np.ndarray) -> float:
    """Empirical mean squared quantization error of the sample."""
    sample2d = np.asarray(sample, dtype=float)
    if sample2d.ndim == 1:
        sample2d = sample2d[:, None]
    if len(sample2d) == 0:
        raise ValueError("sample must be nonempty")
    pts = grid.flat_points()
    labels = _assign(sample2d, pts)
    return float(((sample2d - pts[labels]) ** 2).sum(axis=1).mean())


# ---------------------------------------------------------------------------
# nearest-neighbor index
# ---------------------------------------------------------------------------

@dataclass
class NnIndex:
    """Spatial index under a weighted Euclidean metric.

    ``scales`` multiply coordinates before indexing (0 drops a dimension).
    Duplicate points are collapsed to their lowest original index, which
    realizes the lowest-index tie-break for coincident points; `project`
    additionally resolves exact-distance ties between distinct points.
    Approximate mode trades a bounded distance error (factor 1+eps) for
    speed.
    """
    points: np.ndarray
    scales: np.ndarray
    tree: cKDTree = field(repr=False)
    rep_index: np.ndarray = field(repr=False)  # unique row -> original index
    approx_eps: float = 0.0

    @staticmethod
    def build(points: np.ndarray, scales: np.ndarray | None = None,
              approx_eps: float = 0.0) -> "NnIndex":
        pts = np.ascontiguousarray(np.atleast_2d(np.asarray(points, dtype=float)))
        if pts.shape[0] == 0:
            raise ValueError("index needs at least one point")
        if scales is None:
            scales = np.ones(pts.shape[1])
        scales = np.asarray(scales, dtype=float)
        scaled = pts * scales
        uniq, first = np.unique(scaled, axis=0, return_index=True)
        order = np.argsort(first, kind="stable")
        uniq, first = uniq[order], first[order]
        tree = cKDTree(uniq)
        return NnIndex(points=pts, scales=scales, tree=tree,
                       rep_index=first.astype(np.int64), approx_eps=approx_eps)

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def _unique_scaled(self) -> np.ndarray:
        return self.tree.data

    def query_batch(self, X: np.ndarray, approx: bool = False) -> np.ndarray:
        """Nearest original-point index for each row of X."""
        Xs = np.atleast_2d(np.asarray(X, dtype=float)) * self.scales
        eps = self.approx_eps if approx else 0.0
        workers = -1 if len(Xs) >= 5000 else 1
        _, idx = self.tree.query(Xs, k=1, eps=eps, workers=workers)
        return self.rep_index[idx]

    def project(self, x: np.ndarray) -> tuple[int, np.ndarray]:
        """Exact nearest neighbor; ties broken by lowest point index."""
        xs = np.asarray(x, dtype=float) * self.scales
        d, i = self.tree.query(xs, k=1)
        cand = self.tree.query_ball_point(xs, r=float(d) * (1 + 1e-12))
        best = min(int(self.rep_index[j]) for j in cand) if cand else int(self.rep_index[i])
        return best, self.points[best]

    def knn(self, x: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        """k nearest unique points: (original indices, distances)."""
        if not 1 <= k <= len(self.rep_index):
            raise ValueError("k outside 1..grid size")
        xs = np.asarray(x, dtype=float) * self.scales
        d, i = self.tree.query(xs, k=k)
        d = np.atleast_1d(np.asarray(d, dtype=float))
        i = np.atleast_1d(np.asarray(i))
        return self.rep_index[i], d


def project(x: np.ndarray, idx: NnIndex) -> tuple[int, np.ndarray]:
    return idx.project(x)


def knn_weights(x: np.ndarray, idx: NnIndex, k: int) -> list[tuple[int, float]]:
    """k nearest points with normalized inverse-distance weights.

    Exact hits take all the mass (split evenly among coincident hits), so
    k = 1 degenerates to plain projection and the weights vary
    continuously in x.
    """
    ids, dists = idx.knn(x, k)
    zero = dists <= 0.0
    if zero.any():
        w = zero.astype(float) / zero.sum()
    else:
        inv = 1.0 / dists
        w = inv / inv.sum()
    return [(int(i), float(wi)) for i, wi in zip(ids, w)]


# ---------------------------------------------------------------------------
# persistence (QUANTGRID/1): one row per point, weight first
# ---------------------------------------------------------------------------

GRID_FORMAT_VERSION = "QUANTGRID/1"


def grid_to_csv(grid: QuantGrid, path: str) -> None:
    pts = grid.flat_points()
    with open(path, "w") as fh:
        fh.write(f"# {GRID_FORMAT_VERSION} size={grid.size} dim={pts.shape[1]}\n")
        fh.write("weight," + ",".join(f"x{i}" for i in range(pts.shape[1])) + "\n")
        for w, row in zip(grid.weights, pts):
            fh.write(repr(float(w)) + "," + ",".join(repr(float(v)) for v in row) + "\n")


def grid_from_csv(path: str) -> QuantGrid:
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith(f"# {GRID_FORMAT_VERSION}"):
            raise ValueError(f"expected {GRID_FORMAT_VERSION} header")
        fh.readline()
        rows = [line.strip().split(",") for line in fh if line.strip()]
    weights = np.array([float(r[0]) for r in rows])
    pts = np.array([[float(v) for v in r[1:]] for r in rows])
    points = pts[:, 0] if pts.shape[1] == 1 else pts
    return QuantGrid(points=points, weights=weights / weights.sum())
