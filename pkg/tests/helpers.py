"""Random problem instances shared by unit and acceptance tests."""

import numpy as np

from convbki.bki import SemanticPointCloud
from convbki.grid import DirichletVoxelGrid, GridConfig
from convbki.kernels import KernelModel
from convbki.local_map import Pose

MODES = ("single", "per_class", "compound")


def random_model(rng, mode, num_classes, lo, hi):
    base = KernelModel.uniform(mode, num_classes)
    return base.with_log_lengths(np.log(rng.uniform(lo, hi, base.num_params)))


def oracle_instance(rng, mode):
    """Grid of at most 16^3, at most 200 points, filter wide enough for the kernel support."""
    res = float(rng.choice([0.1, 0.2, 0.25]))
    dims = rng.integers(4, 17, size=3)
    C = int(rng.integers(2, 5))
    origin = rng.uniform(-2, 2, 3)
    cfg = GridConfig(res, np.zeros(3), dims * res, C)
    f = int(rng.choice([3, 5, 7]))
    half = (f - 1) // 2
    model = random_model(rng, mode, C, 0.3 * res, half * res)
    n = int(rng.integers(1, 201))
    # include some points outside the grid to exercise dropping
    pts = origin + rng.uniform(-0.2, 1.1, (n, 3)) * dims * res
    probs = rng.dirichlet(np.full(C, 0.5), size=n)
    if rng.random() < 0.5:
        probs = np.eye(C)[np.argmax(probs, axis=1)]
    grid = DirichletVoxelGrid(cfg, origin=origin)
    return grid, SemanticPointCloud(pts, probs), model, f


def training_scene(rng, num_classes=3, frames=3, points=120, mode="per_class"):
    """A few posed frames of clustered labeled points for gradient checks."""
    from convbki.local_map import yaw_pose
    from convbki.training import TrainConfig, TrainSample

    cfg = TrainConfig(window=frames, resolution=0.2, min_bound=(-1.2, -1.2, -0.8),
                      max_bound=(1.2, 1.2, 0.8), filter_size=5)
    centers = rng.uniform(-0.6, 0.6, (num_classes * 2, 3)) * [1, 1, 0.5]
    owner = rng.integers(0, num_classes, len(centers))
    poses = [yaw_pose(rng.uniform(-0.2, 0.2), rng.uniform(-0.15, 0.15, 3)) for _ in range(frames)]
    clouds, truth = [], None
    for pose in poses:
        pick = rng.integers(0, len(centers), points)
        world = centers[pick] + rng.normal(0, 0.12, (points, 3))
        labels = owner[pick]
        noisy = np.where(rng.random(points) < 0.2, rng.integers(0, num_classes, points), labels)
        clouds.append(SemanticPointCloud.from_labels(pose.inverse().apply(world), noisy,
                                                     num_classes))
        truth = labels
    model = random_model(rng, mode, num_classes, 0.2, 0.45)
    return TrainSample(clouds, poses, truth), model, cfg


def fd_gradient(prep, model, cfg, weights, h=1e-4):
    from convbki.training import forward, nll_loss

    theta = model.log_lengths
    out = np.zeros_like(theta)
    for j in range(len(theta)):
        e = np.zeros_like(theta)
        e[j] = h
        up = forward(prep, model.with_log_lengths(theta + e), cfg)
        dn = forward(prep, model.with_log_lengths(theta - e), cfg)
        out[j] = (nll_loss(up.log_probs, up.labels, weights)
                  - nll_loss(dn.log_probs, dn.labels, weights)) / (2 * h)
    return out


def relative_error(analytic, numeric, floor=1e-6):
    return np.max(np.abs(analytic - numeric) / np.maximum(np.abs(numeric), floor))


def random_pose(rng):
    """Uniformly random rotation (unit quaternion) with a translation in [-50, 50]^3."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    r = np.array([[1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
                  [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
                  [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)]])
    return Pose(r, rng.uniform(-50, 50, 3))
