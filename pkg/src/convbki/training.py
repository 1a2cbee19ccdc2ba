"""Gradient-based fitting of kernel lengths on per-point segmentation labels."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .bki import SemanticPointCloud, voxelize
from .grid import DirichletVoxelGrid, GridConfig
from .kernels import KernelModel, build_filter, filter_log_gradients
from .local_map import Pose, relative_to_initial

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    window: int = 10
    lr: float = 0.007
    epochs: int = 1
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    class_weights: Optional[Sequence[float]] = None
    init_length: float = 0.5
    filter_size: int = 5
    resolution: float = 0.2
    min_bound: Sequence[float] = (-20.0, -20.0, -2.6)
    max_bound: Sequence[float] = (20.0, 20.0, 0.6)
    prior: float = 1e-3
    shuffle_seed: Optional[int] = None

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be at least one frame")
        if self.lr < 0:
            raise ValueError("learning rate must be nonnegative")

    def grid_config(self, num_classes: int) -> GridConfig:
        return GridConfig(self.resolution, self.min_bound, self.max_bound, num_classes, self.prior)


@dataclass
class TrainSample:
    """Window of sensor-frame clouds ending at the target frame.

    ``clouds[-1]`` is the target frame; ``labels`` are its ground-truth classes.
    """

    clouds: List[SemanticPointCloud]
    poses: List[Pose]
    labels: np.ndarray

    def __post_init__(self):
        if len(self.clouds) != len(self.poses) or not self.clouds:
            raise ValueError("need one pose per cloud and at least one cloud")
        C = {c.num_classes for c in self.clouds}
        if len(C) != 1:
            raise ValueError("clouds disagree on the number of classes")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.labels) != len(self.clouds[-1]):
            raise ValueError("one label per target point required")

    @property
    def num_classes(self) -> int:
        return self.clouds[0].num_classes


@dataclass
class PreparedSample:
    """Model-independent part of a forward pass.

    ``patches[c, u]`` is the ``f^3`` input neighborhood (class ``c``) of the
    ``u``-th target voxel; ``point_voxel`` maps kept target points to ``u``.
    """

    patches: np.ndarray
    point_voxel: np.ndarray
    labels: np.ndarray
    num_dropped: int


def prepare(sample: TrainSample, cfg: TrainConfig) -> PreparedSample:
    """Transform the window into the target frame and gather target neighborhoods."""
    C = sample.num_classes
    grid = DirichletVoxelGrid(cfg.grid_config(C))
    current = sample.poses[-1]
    pts, probs = [], []
    for cloud, pose in zip(sample.clouds, sample.poses):
        pts.append(relative_to_initial(pose, current).apply(cloud.positions))
        probs.append(cloud.probs)
    merged = SemanticPointCloud(np.concatenate(pts), np.concatenate(probs))
    F = voxelize(merged, grid).F

    target = sample.clouds[-1].positions
    idx, valid = grid.world_to_voxel(target)
    if not valid.any():
        raise ValueError("no target points inside the grid")
    voxels, point_voxel = np.unique(idx[valid], axis=0, return_inverse=True)
    f = cfg.filter_size
    half = (f - 1) // 2
    padded = np.pad(F, [(0, 0)] + [(half, half)] * 3)
    # cell a of the neighborhood is source voxel v + a - half
    r = np.arange(f)
    gx = voxels[:, 0, None, None, None] + r[:, None, None]
    gy = voxels[:, 1, None, None, None] + r[None, :, None]
    gz = voxels[:, 2, None, None, None] + r[None, None, :]
    patches = padded[:, gx, gy, gz]
    return PreparedSample(patches, point_voxel.reshape(-1), sample.labels[valid],
                          int((~valid).sum()))


@dataclass
class ForwardCache:
    log_probs: np.ndarray
    alpha: np.ndarray
    dalpha: np.ndarray
    point_voxel: np.ndarray
    labels: np.ndarray
    prior: float
    model: KernelModel = field(repr=False)


def forward(sample, model: KernelModel, cfg: TrainConfig) -> ForwardCache:
    """Per-point class log-probabilities of the target frame.

    ``sample`` may be a :class:`TrainSample` or an already prepared one.
    """
    prep = sample if isinstance(sample, PreparedSample) else prepare(sample, cfg)
    K = build_filter(model, cfg.filter_size, cfg.resolution).weights
    G = filter_log_gradients(model, cfg.filter_size, cfg.resolution)
    P = prep.patches
    alpha = np.einsum("cuabe,cabe->uc", P, K)
    dalpha = np.einsum("cuabe,cnabe->ucn", P, G)
    eff = alpha + cfg.prior
    eta = eff.sum(axis=1, keepdims=True)
    C = eff.shape[1]
    with np.errstate(divide="ignore", invalid="ignore"):
        log_e = np.where(eta > 0, np.log(eff) - np.log(eta), -np.log(C))
    return ForwardCache(log_e[prep.point_voxel], alpha, dalpha, prep.point_voxel,
                        prep.labels, cfg.prior, model)


def _point_weights(labels, class_weights, num_classes):
    if class_weights is None:
        return np.ones(len(labels))
    w = np.asarray(class_weights, dtype=np.float64)
    if w.shape != (num_classes,):
        raise ValueError("one class weight per class required")
    return w[labels]


def nll_loss(log_probs, labels, class_weights=None) -> float:
    """Weighted mean of ``-log p(true class)``."""
    log_probs = np.asarray(log_probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    C = log_probs.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise ValueError(f"labels must lie in [0, {C})")
    w = _point_weights(labels, class_weights, C)
    total = w.sum()
    if total == 0:
        return 0.0
    picked = log_probs[np.arange(len(labels)), labels]
    # zero-weight points must not contribute even if their log-prob is -inf
    keep = w > 0
    return float(-np.sum(w[keep] * picked[keep]) / total)


def backward(cache: ForwardCache, labels=None, class_weights=None) -> np.ndarray:
    """Gradient of :func:`nll_loss` with respect to each log kernel length."""
    labels = cache.labels if labels is None else np.asarray(labels, dtype=np.int64)
    U, C = cache.alpha.shape
    w = _point_weights(labels, class_weights, C)
    total = w.sum()
    grad = np.zeros(cache.model.num_params)
    if total == 0:
        return grad
    eff = cache.alpha + cache.prior
    eta = eff.sum(axis=1)
    # dL/d alpha[u, c] = sum_i w_i (1/eta_u - [c == y_i] / eff[u, c]) / W
    wsum = np.bincount(cache.point_voxel, weights=w, minlength=U)
    d_alpha = np.zeros((U, C))
    ok = eta > 0
    d_alpha[ok] = (wsum[ok] / eta[ok])[:, None]
    hit = np.zeros((U, C))
    np.add.at(hit, (cache.point_voxel, labels), w)
    with np.errstate(divide="ignore", invalid="ignore"):
        d_alpha -= np.where(hit > 0, hit / eff, 0.0)
    d_alpha[~ok] = 0.0
    d_alpha /= total
    contrib = np.einsum("uc,ucn->cn", d_alpha, cache.dalpha)
    np.add.at(grad, cache.model.param_index().ravel(), contrib.ravel())
    return grad


def loss_and_grad(prep, model, cfg, class_weights=None):
    cache = forward(prep, model, cfg)
    return nll_loss(cache.log_probs, cache.labels, class_weights), backward(cache, None, class_weights)


def inverse_frequency_weights(label_sets, num_classes: int) -> np.ndarray:
    """Class weights proportional to 1/count, scaled to mean 1 over present classes."""
    counts = np.zeros(num_classes)
    for labels in label_sets:
        counts += np.bincount(np.asarray(labels, dtype=np.int64), minlength=num_classes)
    w = np.zeros(num_classes)
    present = counts > 0
    w[present] = 1.0 / counts[present]
    if present.any():
        w *= present.sum() / w.sum()
    return w


@dataclass
class TrainResult:
    model: KernelModel
    losses: List[float]
    lengths: List[np.ndarray]
    class_weights: np.ndarray


def train(dataset: Sequence, cfg: TrainConfig, model: Optional[KernelModel] = None,
          mode: str = "compound", steps: Optional[int] = None) -> TrainResult:
    """Adam on log-lengths, one sample per step.

    Runs ``cfg.epochs`` passes over ``dataset`` unless ``steps`` is given, in
    which case samples are cycled until that many steps are taken.
    """
    if not dataset:
        raise ValueError("empty training dataset")
    preps = [d if isinstance(d, PreparedSample) else prepare(d, cfg) for d in dataset]
    C = preps[0].patches.shape[0]
    if model is None:
        model = KernelModel.uniform(mode, C, cfg.init_length)
    weights = (np.asarray(cfg.class_weights, dtype=np.float64) if cfg.class_weights is not None
               else inverse_frequency_weights([p.labels for p in preps], C))
    theta = model.log_lengths.copy()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2 = cfg.betas
    rng = np.random.default_rng(cfg.shuffle_seed) if cfg.shuffle_seed is not None else None
    n_steps = steps if steps is not None else cfg.epochs * len(preps)
    order = []
    losses, lengths = [], []
    for t in range(1, n_steps + 1):
        if not order:
            order = list(rng.permutation(len(preps))) if rng is not None else list(range(len(preps)))
        prep = preps[order.pop(0)]
        current = model.with_log_lengths(theta)
        loss, g = loss_and_grad(prep, current, cfg, weights)
        if not np.isfinite(loss) or not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"step {t}: loss={loss}, grad={g}, lengths={current.lengths}")
        losses.append(loss)
        lengths.append(current.lengths.copy())
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        theta = theta - cfg.lr * mhat / (np.sqrt(vhat) + cfg.eps)
        log.debug("step %d loss %.6f", t, loss)
    return TrainResult(model.with_log_lengths(theta), losses, lengths, weights)


def dataset_nll(dataset: Sequence, model: KernelModel, cfg: TrainConfig, class_weights=None) -> float:
    """Weighted NLL pooled over all target points of all samples."""
    num = den = 0.0
    for d in dataset:
        cache = forward(d, model, cfg)
        w = _point_weights(cache.labels, class_weights, cache.log_probs.shape[1])
        picked = cache.log_probs[np.arange(len(cache.labels)), cache.labels]
        keep = w > 0
        num -= float(np.sum(w[keep] * picked[keep]))
        den += float(w.sum())
    return num / den if den else 0.0


def make_samples(clouds: Sequence[SemanticPointCloud], poses: Sequence[Pose],
                 labels: Sequence[np.ndarray], window: int, start: Optional[int] = None):
    """Sliding windows over a sequence; the first sample ends at frame ``start``."""
    start = window - 1 if start is None else start
    return [TrainSample(list(clouds[max(0, t - window + 1):t + 1]),
                        list(poses[max(0, t - window + 1):t + 1]), labels[t])
            for t in range(start, len(clouds))]
