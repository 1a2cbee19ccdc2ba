"""Synthetic labeled scenes and sensor sequences for tests and benchmarks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .bki import SemanticPointCloud
from .local_map import Pose, yaw_pose


@dataclass
class Scene:
    """World-frame surface samples with true labels."""

    points: np.ndarray
    labels: np.ndarray
    num_classes: int


@dataclass
class Sequence:
    clouds: List[SemanticPointCloud]
    poses: List[Pose]
    labels: List[np.ndarray]
    scene: Scene


def _box(rng, n, lo, hi):
    return rng.uniform(lo, hi, size=(n, 3))


def city_scene(rng: np.random.Generator, n: int = 60000, extent: float = 8.0) -> Scene:
    """Flat ground split into road/sidewalk/grass strips plus buildings, poles and cars.

    Classes: 0 road, 1 sidewalk, 2 grass, 3 building, 4 pole, 5 vehicle.
    """
    parts, labels = [], []
    share = {"ground": 0.55, "building": 0.2, "pole": 0.1, "vehicle": 0.15}
    m = int(n * share["ground"])
    g = _box(rng, m, (-extent, -extent, -1.7), (extent, extent, -1.5))
    y = g[:, 1]
    parts.append(g)
    labels.append(np.where(np.abs(y) < 3.0, 0, np.where(np.abs(y) < 4.5, 1, 2)))
    m = int(n * share["building"]) // 2
    for sign in (-1, 1):
        parts.append(_box(rng, m, (-extent, sign * 6.5 - 0.5, -1.5), (extent, sign * 6.5 + 0.5, 1.5)))
        labels.append(np.full(m, 3))
    xs = np.arange(-extent + 1.0, extent, 3.0)
    m = int(n * share["pole"]) // len(xs)
    for x in xs:
        parts.append(_box(rng, m, (x - 0.1, 3.7, -1.5), (x + 0.1, 3.9, 1.3)))
        labels.append(np.full(m, 4))
    m = int(n * share["vehicle"]) // 2
    for x0 in (-4.0, 3.0):
        parts.append(_box(rng, m, (x0, -1.8, -1.5), (x0 + 3.8, -0.2, -0.1)))
        labels.append(np.full(m, 5))
    return Scene(np.concatenate(parts), np.concatenate(labels), 6)


def pole_world(rng: np.random.Generator, extent: float = 3.6, n_ground: int = 9000,
               n_pole: int = 6000) -> Scene:
    """Two classes: horizontal plates (0, ground) and thin vertical poles (1).

    Poles pass through an elevated plate so that each class has neighbors of
    the other class along the axis it should not spread on.
    """
    res = 0.2
    cells = np.arange(-extent + 0.6, extent - 0.4, 1.0)
    pole_xy = np.array([(x, y) for x in cells for y in cells])
    parts, labels = [], []
    for z0 in (0.0, 1.4):
        g = _box(rng, n_ground // 2, (-extent, -extent, z0), (extent, extent, z0 + res))
        if z0 > 0:
            # leave the pole cells themselves to the poles
            cell = np.floor(g[:, :2] / res)
            hole = np.zeros(len(g), dtype=bool)
            for px, py in pole_xy:
                hole |= (cell[:, 0] == np.floor(px / res)) & (cell[:, 1] == np.floor(py / res))
            g = g[~hole]
        parts.append(g)
        labels.append(np.zeros(len(g), dtype=np.int64))
    per = n_pole // len(pole_xy)
    for px, py in pole_xy:
        x0, y0 = np.floor(px / res) * res, np.floor(py / res) * res
        parts.append(_box(rng, per, (x0, y0, res), (x0 + res, y0 + res, 2.6)))
        labels.append(np.ones(per, dtype=np.int64))
    return Scene(np.concatenate(parts), np.concatenate(labels), 2)


def corrupt_labels(rng: np.random.Generator, labels, num_classes: int, rate: float) -> np.ndarray:
    """Replace a ``rate`` fraction of labels with a uniform random class."""
    labels = np.array(labels, dtype=np.int64)
    hit = rng.random(len(labels)) < rate
    labels[hit] = rng.integers(0, num_classes, size=hit.sum())
    return labels


def observe(rng: np.random.Generator, scene: Scene, poses: List[Pose], points_per_frame: int,
            noise_rate: float = 0.0) -> Sequence:
    """Sample a subset of the scene per pose, expressed in that sensor frame.

    Point labels carry the corruption; ``labels`` hold the truth.
    """
    clouds, truths = [], []
    for pose in poses:
        pick = rng.choice(len(scene.points), size=min(points_per_frame, len(scene.points)),
                          replace=False)
        world = scene.points[pick]
        truth = scene.labels[pick]
        noisy = corrupt_labels(rng, truth, scene.num_classes, noise_rate)
        sensor = pose.inverse().apply(world)
        clouds.append(SemanticPointCloud.from_labels(sensor, noisy, scene.num_classes))
        truths.append(truth)
    return Sequence(clouds, list(poses), truths, scene)


def straight_path(n: int, step: float = 0.3, yaw_rate: float = 0.0) -> List[Pose]:
    return [yaw_pose(i * yaw_rate, (i * step, 0.0, 0.0)) for i in range(n)]


def random_cloud(rng: np.random.Generator, n: int, num_classes: int, lo, hi,
                 soft: bool = True) -> SemanticPointCloud:
    pts = rng.uniform(lo, hi, size=(n, 3))
    if soft:
        probs = rng.dirichlet(np.ones(num_classes), size=n)
        return SemanticPointCloud(pts, probs)
    return SemanticPointCloud.from_labels(pts, rng.integers(0, num_classes, n), num_classes)
