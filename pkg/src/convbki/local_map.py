"""Ego-motion propagation of the local grid by whole-voxel translation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bki import SemanticPointCloud
from .grid import DirichletVoxelGrid


@dataclass
class Pose:
    """Rigid transform: ``p_out = rotation @ p + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.validate()

    def validate(self, tol: float = 1e-6):
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if not np.isfinite(err) or err > tol or np.linalg.det(self.rotation) <= 0:
            raise ValueError(f"rotation is not a proper orthonormal matrix (error {err:.3g})")

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """``self * other``: apply ``other`` first."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation


def yaw_pose(yaw: float, translation=(0.0, 0.0, 0.0)) -> Pose:
    c, s = np.cos(yaw), np.sin(yaw)
    return Pose(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]), translation)


def relative_to_initial(pose: Pose, initial: Pose) -> Pose:
    """Transform from the current sensor frame into the initial frame."""
    return initial.inverse().compose(pose)


def round_half_away(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def voxel_index(translation, resolution: float) -> np.ndarray:
    """Nearest whole-voxel position of a translation (ties away from zero)."""
    return round_half_away(np.asarray(translation) / resolution).astype(np.int64)


def voxel_shift(translation, prev_translation, resolution: float) -> np.ndarray:
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    return voxel_index(translation, resolution) - voxel_index(prev_translation, resolution)


def residual_offset(translation, resolution: float) -> np.ndarray:
    """Sub-voxel remainder left after rounding the translation to whole voxels."""
    translation = np.asarray(translation, dtype=np.float64)
    return translation - resolution * voxel_index(translation, resolution)


@dataclass
class ShiftResult:
    shift: np.ndarray
    offset: np.ndarray
    rotation: np.ndarray


def plan_shift(rel: Pose, prev_rel: Pose, resolution: float) -> ShiftResult:
    return ShiftResult(voxel_shift(rel.translation, prev_rel.translation, resolution),
                       residual_offset(rel.translation, resolution), rel.rotation)


def shift_grid(grid: DirichletVoxelGrid, shift,
               out: Optional[DirichletVoxelGrid] = None) -> DirichletVoxelGrid:
    """Grid whose voxel ``i`` holds the old voxel ``i + shift``.

    Voxels with no source revert to zero evidence and the origin advances by
    ``shift`` voxels. Values are copied, never interpolated. ``out`` may be a
    spare grid of the same config to write into instead of allocating.
    """
    shift = np.asarray(shift, dtype=np.int64).reshape(3)
    origin = grid.origin + grid.resolution * shift
    if out is None:
        out = DirichletVoxelGrid(grid.config, None, origin)
        fresh = True
    else:
        if out is grid or out.alpha.shape != grid.alpha.shape:
            raise ValueError("output grid must be a distinct grid of the same shape")
        out.origin = origin
        fresh = False
    dst, src = [slice(None)], [slice(None)]
    for s, n in zip(shift, grid.dims):
        s = int(s)
        if abs(s) >= n:
            if not fresh:
                out.alpha[...] = 0.0
            return out
        dst.append(slice(max(0, -s), n - max(0, s)))
        src.append(slice(max(0, s), n - max(0, -s)))
    out.alpha[tuple(dst)] = grid.alpha[tuple(src)]
    if not fresh:
        # clear only the slabs that received no source voxel
        for axis, s in enumerate(shift, start=1):
            if s:
                slab = [slice(None)] * 4
                slab[axis] = slice(0, -s) if s < 0 else slice(grid.alpha.shape[axis] - s, None)
                out.alpha[tuple(slab)] = 0.0
    return out


def cloud_to_map_frame(cloud: SemanticPointCloud, rel: Pose) -> SemanticPointCloud:
    """Rotate and translate sensor-frame points into the map frame."""
    return cloud.with_positions(rel.apply(cloud.positions))


def to_grid_local(points, grid: DirichletVoxelGrid) -> np.ndarray:
    """Map-frame positions relative to the grid corner."""
    return np.asarray(points) - grid.origin


class LocalMap:
    """Tracks the initial pose and keeps the grid centered on the ego vehicle.

    Shifts alternate between two buffers, so a grid object taken from
    ``self.grid`` is overwritten by the second shift after it; copy it to keep it.
    """

    def __init__(self, grid: DirichletVoxelGrid):
        self.grid = grid
        self.initial = None
        self.rel = None
        self._anchor = grid.origin.copy()
        self._spare = None

    def move_to(self, pose: Pose) -> ShiftResult:
        """Shift the grid for a new pose; returns the applied shift."""
        if self.initial is None:
            self.initial = pose
            self.rel = Pose.identity()
        rel = relative_to_initial(pose, self.initial)
        plan = plan_shift(rel, self.rel, self.grid.resolution)
        if np.any(plan.shift):
            spare = self._spare
            if spare is None or spare.alpha.shape != self.grid.alpha.shape:
                spare = DirichletVoxelGrid(self.grid.config)
            self._spare = self.grid
            self.grid = shift_grid(self.grid, plan.shift, spare)
            # recompute from the anchor so repeated shifts do not drift
            self.grid.origin = self._anchor + self.grid.resolution * voxel_index(
                rel.translation, self.grid.resolution)
        self.rel = rel
        return plan

    def to_map(self, cloud: SemanticPointCloud) -> SemanticPointCloud:
        return cloud_to_map_frame(cloud, self.rel)
