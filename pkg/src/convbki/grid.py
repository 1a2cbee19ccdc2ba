"""Voxel grid state and Dirichlet statistics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

# sentinel index returned for points outside the grid
OUT_OF_BOUNDS = -1


@dataclass
class GridConfig:
    """Geometry and class layout of a dense local grid.

    ``min_bound``/``max_bound`` are the local extent (meters) relative to the
    grid anchor; ``prior`` is the per-class Dirichlet concentration added at
    query time only.
    """

    resolution: float
    min_bound: Sequence[float]
    max_bound: Sequence[float]
    num_classes: int
    prior: float = 1e-3
    dynamic_classes: Sequence[int] = ()

    def __post_init__(self):
        self.resolution = float(self.resolution)
        self.min_bound = np.asarray(self.min_bound, dtype=np.float64).reshape(3)
        self.max_bound = np.asarray(self.max_bound, dtype=np.float64).reshape(3)
        self.dynamic_classes = tuple(int(c) for c in self.dynamic_classes)
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if not np.all(self.max_bound > self.min_bound):
            raise ValueError("max_bound must exceed min_bound componentwise")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if self.prior < 0:
            raise ValueError("prior must be nonnegative")
        extent = (self.max_bound - self.min_bound) / self.resolution
        dims = np.rint(extent)
        if np.any(np.abs(extent - dims) > 1e-9 * np.maximum(1.0, dims)):
            raise ValueError(f"extent {extent} is not a whole number of voxels")
        self._dims = tuple(int(d) for d in dims)
        for c in self.dynamic_classes:
            if not 0 <= c < self.num_classes:
                raise ValueError(f"dynamic class {c} out of range")

    @property
    def dims(self) -> tuple:
        return self._dims

    @property
    def shape(self) -> tuple:
        return (self.num_classes,) + self._dims

    @property
    def dynamic_mask(self) -> np.ndarray:
        mask = np.zeros(self.num_classes, dtype=bool)
        mask[list(self.dynamic_classes)] = True
        return mask

    def to_dict(self) -> dict:
        return {
            "resolution": self.resolution,
            "min_bound": self.min_bound.tolist(),
            "max_bound": self.max_bound.tolist(),
            "num_classes": self.num_classes,
            "prior": self.prior,
            "dynamic_classes": list(self.dynamic_classes),
        }


@dataclass
class DirichletVoxelGrid:
    """Per-voxel accumulated concentrations, shape ``(C, X, Y, Z)``.

    ``alpha`` holds raw evidence starting at zero; the prior is only applied
    by :func:`stats`. ``origin`` is the map-frame position of the grid corner.
    """

    config: GridConfig
    alpha: np.ndarray = None
    origin: np.ndarray = None

    def __post_init__(self):
        if self.alpha is None:
            self.alpha = np.zeros(self.config.shape, dtype=np.float64)
        elif self.alpha.shape != self.config.shape:
            raise ValueError(f"alpha shape {self.alpha.shape} != {self.config.shape}")
        if self.origin is None:
            self.origin = self.config.min_bound.copy()
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)

    @property
    def resolution(self) -> float:
        return self.config.resolution

    @property
    def dims(self) -> tuple:
        return self.config.dims

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    def copy(self) -> "DirichletVoxelGrid":
        return DirichletVoxelGrid(self.config, self.alpha.copy(), self.origin.copy())

    def world_to_voxel(self, points):
        return world_to_voxel(points, self.origin, self.resolution, self.dims)

    def voxel_centroid(self, idx):
        return voxel_centroid(idx, self.origin, self.resolution, self.dims)

    def centroids(self) -> np.ndarray:
        """Centroids of every voxel as an ``(X, Y, Z, 3)`` array."""
        axes = [self.origin[a] + self.resolution * (np.arange(n) + 0.5)
                for a, n in enumerate(self.dims)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def observed(self) -> np.ndarray:
        """Boolean ``(X, Y, Z)`` mask of voxels with any accumulated evidence."""
        return self.alpha.sum(axis=0) > 0


def world_to_voxel(points, origin, resolution, dims):
    """Map positions to integer voxel indices.

    Accepts a single 3-vector or an ``(N, 3)`` array. Returns ``(idx, valid)``
    where rows of ``idx`` outside the grid are set to ``OUT_OF_BOUNDS``.
    Points on a voxel face belong to the higher-index voxel.
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    idx = np.floor((pts - np.asarray(origin)) / resolution)
    valid = np.all((idx >= 0) & (idx < np.asarray(dims)), axis=1)
    idx = np.where(valid[:, None], idx, OUT_OF_BOUNDS).astype(np.int64)
    if single:
        return (tuple(int(i) for i in idx[0]) if valid[0] else None), bool(valid[0])
    return idx, valid


def voxel_centroid(idx, origin, resolution, dims) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64)
    if np.any(idx < 0) or np.any(idx >= np.asarray(dims)):
        raise IndexError(f"voxel index {idx.tolist()} outside grid {tuple(dims)}")
    return np.asarray(origin) + resolution * (idx + 0.5)


@dataclass
class DirichletStats:
    expectation: np.ndarray
    variance: np.ndarray
    eta: np.ndarray
    no_evidence: np.ndarray = field(default=None)


def stats(alpha, prior: float = 0.0) -> DirichletStats:
    """Dirichlet mean and variance over the last axis of ``alpha``.

    The effective concentration is ``alpha + prior``. Where the total is zero
    the expectation falls back to uniform and ``no_evidence`` is set.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any(alpha < 0) or prior < 0:
        raise ValueError("concentrations must be nonnegative")
    eff = alpha + prior
    eta = eff.sum(axis=-1)
    empty = eta <= 0
    safe = np.where(empty, 1.0, eta)
    expectation = eff / safe[..., None]
    expectation = np.where(empty[..., None], 1.0 / alpha.shape[-1], expectation)
    variance = expectation * (1.0 - expectation) / (1.0 + eta[..., None])
    return DirichletStats(expectation, variance, eta, empty)


def argmax_class(alpha) -> np.ndarray:
    """Index of the largest concentration; ties go to the lowest index."""
    return np.argmax(np.asarray(alpha), axis=-1)


def max_class_variance(grid: DirichletVoxelGrid) -> np.ndarray:
    """Variance of the most likely class per voxel, shape ``(X, Y, Z)``."""
    st = stats(np.moveaxis(grid.alpha, 0, -1), grid.config.prior)
    best = np.argmax(st.expectation, axis=-1)
    return np.take_along_axis(st.variance, best[..., None], axis=-1)[..., 0]


def empty_like(grid: DirichletVoxelGrid, origin: Optional[np.ndarray] = None):
    return DirichletVoxelGrid(grid.config, None,
                              grid.origin.copy() if origin is None else origin)
