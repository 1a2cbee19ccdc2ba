"""Timing and robustness sweeps at desk scale."""

from __future__ import annotations

import time
from typing import Optional, Sequence

import numpy as np

from .bki import ConvBKI, SemanticPointCloud, query, update, voxelize
from .grid import DirichletVoxelGrid, GridConfig
from .kernels import KernelModel, build_filter
from .local_map import LocalMap
from .pipeline import run_frames
from .synthetic import city_scene, observe, straight_path


def lidar_like_cloud(rng: np.random.Generator, n: int, num_classes: int, radius: float = 20.0,
                     ground_z: float = -1.7, soft: bool = True) -> SemanticPointCloud:
    """Ring-scan-like cloud: denser near the sensor, mostly ground plus vertical clutter."""
    r = radius * np.sqrt(rng.uniform(0.0025, 1.0, n)) ** 1.5
    th = rng.uniform(0, 2 * np.pi, n)
    z = np.where(rng.random(n) < 0.6, ground_z + rng.normal(0, 0.05, n),
                 rng.uniform(ground_z, 2.5, n))
    pts = np.stack([r * np.cos(th), r * np.sin(th), z], axis=1)
    if soft:
        logits = rng.normal(0, 1, (n, num_classes))
        logits[np.arange(n), rng.integers(0, num_classes, n)] += 4.0
        probs = np.exp(logits - logits.max(axis=1, keepdims=True))
        return SemanticPointCloud(pts, probs / probs.sum(axis=1, keepdims=True))
    return SemanticPointCloud.from_labels(pts, rng.integers(0, num_classes, n), num_classes)


def time_update(config: GridConfig, model: KernelModel, filter_size: int,
                cloud: SemanticPointCloud, repeats: int = 3) -> float:
    """Median wall time of voxelize + depthwise update on a fresh grid."""
    bank = build_filter(model, filter_size, config.resolution)
    grid = DirichletVoxelGrid(config)
    update(grid, voxelize(cloud, grid), bank)  # warm-up (JIT compile, page faults)
    times = []
    for _ in range(repeats):
        grid.alpha[...] = 0.0
        t0 = time.perf_counter()
        update(grid, voxelize(cloud, grid), bank)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def throughput_sweep(rng: np.random.Generator, n_points: int = 100_000, num_classes: int = 11,
                     resolutions: Sequence[float] = (0.4, 0.2, 0.1),
                     filter_sizes: Sequence[int] = (3, 5, 7, 9),
                     half_extent: float = 10.0, repeats: int = 3):
    """Rows of ``{sweep, resolution, filter_size, dims, seconds, hz}``."""
    cloud = lidar_like_cloud(rng, n_points, num_classes, radius=half_extent)
    model = KernelModel.uniform("compound", num_classes, 0.5)
    rows = []

    def run(sweep, res, f):
        cfg = GridConfig(res, (-half_extent, -half_extent, -2.4), (half_extent, half_extent, 2.4),
                         num_classes)
        s = time_update(cfg, model, f, cloud, repeats)
        rows.append({"sweep": sweep, "resolution": res, "filter_size": f,
                     "dims": "x".join(map(str, cfg.dims)), "seconds": s, "hz": 1.0 / s})

    for res in resolutions:
        run("resolution", res, 5)
    for f in filter_sizes:
        run("filter_size", 0.2, f)
    return rows


class GlobalStore:
    """Naive global map: every observed voxel kept forever in flat arrays.

    Building the dense local window scans all stored voxels, so its cost
    grows with map size. Used only as the baseline for local propagation.
    """

    def __init__(self, num_classes: int):
        self.keys = np.zeros((0, 3), dtype=np.int64)
        self.alpha = np.zeros((0, num_classes))

    def load_window(self, corner, dims, num_classes):
        grid = np.zeros((num_classes,) + tuple(dims))
        rel = self.keys - corner
        inside = np.all((rel >= 0) & (rel < np.asarray(dims)), axis=1)
        r = rel[inside]
        grid[:, r[:, 0], r[:, 1], r[:, 2]] = self.alpha[inside].T
        return grid, inside

    def store_window(self, corner, grid, inside):
        observed = np.argwhere(grid.any(axis=0))
        vals = grid[:, observed[:, 0], observed[:, 1], observed[:, 2]].T
        self.keys = np.concatenate([self.keys[~inside], observed + corner])
        self.alpha = np.concatenate([self.alpha[~inside], vals])


def propagation_sweep(rng: np.random.Generator, n_frames: int = 200, num_classes: int = 11,
                      points_per_frame: int = 20_000, step: float = 0.3,
                      with_global: bool = True, half_extent: float = 10.0, warmup: int = 5):
    """Per-frame propagation times of the local map and, optionally, a global store.

    The first ``warmup`` frames are driven but not recorded.
    """
    cfg = GridConfig(0.2, (-half_extent, -half_extent, -2.4), (half_extent, half_extent, 2.4),
                     num_classes)
    layer = ConvBKI(KernelModel.uniform("compound", num_classes, 0.5), 5)
    local = LocalMap(DirichletVoxelGrid(cfg))
    store = GlobalStore(num_classes) if with_global else None
    local_t, global_t = [], []
    for i, pose in enumerate(straight_path(n_frames + warmup, step)):
        cloud = lidar_like_cloud(rng, points_per_frame, num_classes, half_extent, soft=False)
        t0 = time.perf_counter()
        local.move_to(pose)
        t_local = time.perf_counter() - t0
        grid = local.grid
        layer(grid, local.to_map(cloud))
        t_global = None
        if store is not None:
            corner = np.rint(grid.origin / cfg.resolution).astype(np.int64)
            t0 = time.perf_counter()
            window, inside = store.load_window(corner, cfg.dims, num_classes)
            t_global = time.perf_counter() - t0
            store.store_window(corner, grid.alpha, inside)
        if i >= warmup:
            local_t.append(t_local)
            global_t.append(t_global)
    return np.array(local_t), (np.array(global_t) if store is not None else None)


def noise_sweep(rng: np.random.Generator, rates: Sequence[float] = (0.0, 0.1, 0.2, 0.3, 0.5),
                n_frames: int = 10, points_per_frame: int = 8000,
                model: Optional[KernelModel] = None, filter_size: int = 5):
    """Point accuracy of raw corrupted labels vs. mapped predictions on a static scene."""
    scene = city_scene(rng)
    cfg = GridConfig(0.2, (-8.0, -8.0, -2.0), (8.0, 8.0, 2.0), scene.num_classes)
    model = model or KernelModel.uniform("single", scene.num_classes, 0.5)
    raw, mapped = [], []
    for rate in rates:
        seq = observe(rng, scene, straight_path(n_frames, 0.0), points_per_frame, rate)
        res = run_frames(seq.clouds, seq.poses, cfg, model, options=None, truths=None)
        grid = res.grid
        noisy = np.concatenate([c.labels for c in seq.clouds])
        truth = np.concatenate(seq.labels)
        pts = np.concatenate([c.positions for c in seq.clouds])
        pred = query(grid, pts).labels
        raw.append(float(np.mean(noisy == truth)))
        mapped.append(float(np.mean(pred == truth)))
    return list(rates), raw, mapped
