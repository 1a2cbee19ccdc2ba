"""Propagation of dynamic-class belief along externally predicted offsets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import DirichletVoxelGrid


@dataclass
class DynamicField:
    """Per-voxel backward offsets ``(X, Y, Z, 3)`` and object probabilities ``(X, Y, Z)``.

    Offsets point from a voxel at time t to where its content was at t-1, in
    meters unless ``voxel_units`` is set.
    """

    offsets: np.ndarray
    probs: np.ndarray
    voxel_units: bool = False

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=np.float64)
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.offsets.shape != self.probs.shape + (3,):
            raise ValueError(f"offsets {self.offsets.shape} do not match probs {self.probs.shape}")
        if not np.all(np.isfinite(self.offsets)):
            raise ValueError("offsets must be finite")
        if np.any(self.probs < 0) or np.any(self.probs > 1):
            raise ValueError("probabilities must lie in [0, 1]")

    @classmethod
    def identity(cls, dims) -> "DynamicField":
        return cls(np.zeros(tuple(dims) + (3,)), np.ones(tuple(dims)))

    @classmethod
    def uniform(cls, dims, offset, prob: float = 1.0, voxel_units: bool = False):
        dims = tuple(dims)
        return cls(np.broadcast_to(np.asarray(offset, dtype=np.float64), dims + (3,)).copy(),
                   np.full(dims, float(prob)), voxel_units)


def _interp(values: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Trilinear interpolation of ``values`` (..., X, Y, Z) at voxel-lattice coords (M, 3).

    Lattice coordinate ``i`` is the centroid of voxel ``i``; corners outside
    the grid contribute zero.
    """
    dims = np.array(values.shape[-3:])
    # meters-to-lattice division leaves ~1e-16 noise; treat near-nodes as nodes
    nearest = np.rint(coords)
    coords = np.where(np.abs(coords - nearest) < 1e-9, nearest, coords)
    base = np.floor(coords).astype(np.int64)
    frac = coords - base
    out = np.zeros(values.shape[:-3] + (len(coords),))
    for corner in range(8):
        bits = np.array([(corner >> 2) & 1, (corner >> 1) & 1, corner & 1])
        idx = base + bits
        w = np.prod(np.where(bits, frac, 1.0 - frac), axis=1)
        ok = np.all((idx >= 0) & (idx < dims), axis=1) & (w != 0)
        if not ok.any():
            continue
        ii = idx[ok]
        out[..., ok] += w[ok] * values[..., ii[:, 0], ii[:, 1], ii[:, 2]]
    return out


def trilinear_sample(grid: DirichletVoxelGrid, x, cls: int):
    """Interpolated concentration of class ``cls`` at map-frame position(s) ``x``."""
    x = np.asarray(x, dtype=np.float64)
    coords = (np.atleast_2d(x) - grid.origin) / grid.resolution - 0.5
    val = _interp(grid.alpha[cls], coords)
    return float(val[0]) if x.ndim == 1 else val


def propagate_dynamic(grid_prev: DirichletVoxelGrid, field: DynamicField,
                      dynamic_mask=None) -> DirichletVoxelGrid:
    """Resample dynamic classes from offset locations, weighted by object probability.

    For each voxel and dynamic class the new concentration is
    ``p * interp(centroid + offset)`` over the previous grid; static classes
    are copied unchanged.
    """
    if field.probs.shape != tuple(grid_prev.dims):
        raise ValueError(f"field shape {field.probs.shape} does not match grid {grid_prev.dims}")
    mask = grid_prev.config.dynamic_mask if dynamic_mask is None else np.asarray(dynamic_mask, bool)
    if mask.shape != (grid_prev.num_classes,):
        raise ValueError("dynamic mask must have one entry per class")
    out = grid_prev.copy()
    dyn = np.flatnonzero(mask)
    if dyn.size == 0:
        return out
    # sample positions in lattice units directly so whole-voxel offsets stay exact
    lattice = np.stack(np.meshgrid(*[np.arange(n, dtype=np.float64) for n in grid_prev.dims],
                                   indexing="ij"), axis=-1).reshape(-1, 3)
    step = field.offsets.reshape(-1, 3)
    if not field.voxel_units:
        step = step / grid_prev.resolution
    sampled = _interp(grid_prev.alpha[dyn], lattice + step)
    out.alpha[dyn] = (field.probs.reshape(-1) * sampled).reshape((len(dyn),) + tuple(grid_prev.dims))
    return out
