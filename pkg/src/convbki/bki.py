"""Point cloud voxelization and the convolutional Bayesian kernel update."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

from .grid import DirichletVoxelGrid, stats, world_to_voxel
from .kernels import FilterBank, KernelModel, build_filter

# query status codes
OK = 0
NO_EVIDENCE = 1
OUT_OF_BOUNDS = 2


@dataclass
class SemanticPointCloud:
    """``positions`` (N, 3) meters with categorical rows ``probs`` (N, C)."""

    positions: np.ndarray
    probs: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 2 or len(self.probs) != len(self.positions):
            raise ValueError("probs must be (N, C) matching positions")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("point coordinates must be finite")
        if len(self.probs) and (np.any(self.probs < 0)
                                or np.any(np.abs(self.probs.sum(axis=1) - 1.0) > 1e-6)):
            raise ValueError("probability rows must be nonnegative and sum to 1")

    @classmethod
    def from_labels(cls, positions, labels, num_classes: int) -> "SemanticPointCloud":
        labels = np.asarray(labels, dtype=np.int64)
        if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
            raise ValueError(f"labels must lie in [0, {num_classes})")
        probs = np.zeros((len(labels), num_classes))
        probs[np.arange(len(labels)), labels] = 1.0
        return cls(positions, probs, labels)

    @classmethod
    def empty(cls, num_classes: int) -> "SemanticPointCloud":
        return cls(np.zeros((0, 3)), np.zeros((0, num_classes)))

    def __len__(self):
        return len(self.positions)

    @property
    def num_classes(self) -> int:
        return self.probs.shape[1]

    def with_positions(self, positions) -> "SemanticPointCloud":
        return SemanticPointCloud(positions, self.probs, self.labels)


@dataclass
class InputVolume:
    """Per-voxel sum of point probability rows, ``F`` of shape (C, X, Y, Z)."""

    F: np.ndarray
    counts: np.ndarray
    dropped: int = 0


def voxelize(cloud: SemanticPointCloud, grid: DirichletVoxelGrid,
             out: Optional[InputVolume] = None) -> InputVolume:
    """Sum class probability rows of the points falling in each voxel.

    ``cloud`` must already be in the map frame. Points outside the grid are
    dropped and counted. ``out`` is an optional volume to overwrite instead of
    allocating a new one.
    """
    if cloud.num_classes != grid.num_classes:
        raise ValueError(f"cloud has {cloud.num_classes} classes, grid {grid.num_classes}")
    dims = grid.dims
    if out is None:
        out = InputVolume(np.zeros(grid.config.shape), np.zeros(dims, dtype=np.int64))
    else:
        if out.F.shape != grid.config.shape or out.counts.shape != dims:
            raise ValueError("output volume does not match the grid")
        out.F[...] = 0.0
        out.counts[...] = 0
        out.dropped = 0
    if len(cloud) == 0:
        return out
    idx, valid = world_to_voxel(cloud.positions, grid.origin, grid.resolution, dims)
    flat = np.ravel_multi_index(idx[valid].T, dims)
    probs = cloud.probs[valid]
    # accumulate over occupied voxels only, then scatter into the dense volume
    occupied, inverse = np.unique(flat, return_inverse=True)
    inverse = inverse.reshape(-1)
    F = out.F.reshape(grid.num_classes, -1)
    for c in range(grid.num_classes):
        F[c, occupied] = np.bincount(inverse, weights=probs[:, c], minlength=len(occupied))
    out.counts.reshape(-1)[occupied] = np.bincount(inverse, minlength=len(occupied))
    out.dropped = int(len(cloud) - valid.sum())
    return out


@numba.njit(cache=True)
def _scatter(alpha, F, nz, K):
    C, X, Y, Z = alpha.shape
    f = K.shape[1]
    half = (f - 1) // 2
    for c in range(C):
        for n in range(nz.shape[0]):
            x, y, z = nz[n, 0], nz[n, 1], nz[n, 2]
            w = F[c, x, y, z]
            if w == 0.0:
                continue
            # cell a sits at displacement (half - a) from the source voxel
            for a in range(f):
                tx = x + half - a
                if tx < 0 or tx >= X:
                    continue
                for b in range(f):
                    ty = y + half - b
                    if ty < 0 or ty >= Y:
                        continue
                    for e in range(f):
                        tz = z + half - e
                        if tz < 0 or tz >= Z:
                            continue
                        alpha[c, tx, ty, tz] += K[c, a, b, e] * w


def convolve(F: np.ndarray, weights: np.ndarray, out: Optional[np.ndarray] = None) -> np.ndarray:
    """Zero-padded depthwise convolution of ``F`` with ``weights``, accumulated into ``out``.

    Runs as a scatter over nonzero input voxels, which equals the gather form
    because the filters are symmetric under negation.
    """
    if out is None:
        out = np.zeros(F.shape)
    nz = np.argwhere(F.any(axis=0)).astype(np.int64)
    _scatter(out, np.ascontiguousarray(F, dtype=np.float64), nz,
             np.ascontiguousarray(weights, dtype=np.float64))
    return out


def update(grid: DirichletVoxelGrid, volume: InputVolume, bank: FilterBank) -> DirichletVoxelGrid:
    """Add the filtered input volume to the grid concentrations in place."""
    if volume.F.shape != grid.alpha.shape:
        raise ValueError(f"input volume {volume.F.shape} does not match grid {grid.alpha.shape}")
    if bank.weights.shape[0] != grid.num_classes:
        raise ValueError("filter bank class count does not match grid")
    if not np.isclose(bank.resolution, grid.resolution, rtol=1e-12, atol=0):
        raise ValueError(f"filter built for resolution {bank.resolution}, grid uses {grid.resolution}")
    convolve(volume.F, bank.weights, grid.alpha)
    return grid


def brute_force_update(grid: DirichletVoxelGrid, cloud: SemanticPointCloud, model: KernelModel,
                       snap: bool = True) -> DirichletVoxelGrid:
    """Direct per-point kernel update against every voxel centroid (slow reference).

    With ``snap`` each point is first moved to its voxel centroid, which is
    what the discretized update assumes. Points outside the grid are ignored.
    """
    idx, valid = world_to_voxel(cloud.positions, grid.origin, grid.resolution, grid.dims)
    if snap:
        pts = grid.origin + grid.resolution * (idx[valid] + 0.5)
    else:
        pts = cloud.positions[valid]
    probs = cloud.probs[valid]
    cents = grid.centroids().reshape(-1, 3)
    for i in range(len(pts)):
        delta = cents - pts[i]
        for c in range(grid.num_classes):
            if probs[i, c] == 0.0:
                continue
            grid.alpha[c] += (model.evaluate(delta, c) * probs[i, c]).reshape(grid.dims)
    return grid


@dataclass
class QueryResult:
    expectation: np.ndarray
    variance: np.ndarray
    labels: np.ndarray
    status: np.ndarray


def query(grid: DirichletVoxelGrid, points) -> QueryResult:
    """Dirichlet statistics of the voxel containing each point.

    Untouched voxels report ``NO_EVIDENCE`` (uniform under a symmetric prior);
    points outside the grid report ``OUT_OF_BOUNDS`` with label -1.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    C = grid.num_classes
    idx, valid = world_to_voxel(points, grid.origin, grid.resolution, grid.dims)
    alpha = np.zeros((len(points), C))
    ii = idx[valid]
    alpha[valid] = grid.alpha[:, ii[:, 0], ii[:, 1], ii[:, 2]].T
    st = stats(alpha, grid.config.prior)
    status = np.full(len(points), OK, dtype=np.int8)
    status[alpha.sum(axis=1) <= 0] = NO_EVIDENCE
    status[~valid] = OUT_OF_BOUNDS
    expectation = st.expectation
    expectation[~valid] = 1.0 / C
    variance = st.variance
    labels = np.argmax(expectation, axis=1)
    labels[~valid] = -1
    return QueryResult(expectation, variance, labels, status)


class ConvBKI:
    """Kernel model plus filter size; caches the filter bank per resolution.

    The input volume is reused between calls, so the volume returned by one
    call is overwritten by the next.
    """

    def __init__(self, model: KernelModel, filter_size: int = 5):
        self.model = model
        self.filter_size = filter_size
        self._banks = {}
        self._volume = None

    def bank(self, resolution: float) -> FilterBank:
        if resolution not in self._banks:
            self._banks[resolution] = build_filter(self.model, self.filter_size, resolution)
        return self._banks[resolution]

    def __call__(self, grid: DirichletVoxelGrid, cloud: SemanticPointCloud) -> InputVolume:
        vol = self._volume
        if vol is None or vol.F.shape != grid.alpha.shape:
            vol = None
        self._volume = voxelize(cloud, grid, vol)
        update(grid, self._volume, self.bank(grid.resolution))
        return self._volume
