"""Per-frame mapping loop: ego shift, dynamic propagation, ConvBKI update."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .bki import ConvBKI, SemanticPointCloud, query
from .dynamic import DynamicField, propagate_dynamic
from .grid import DirichletVoxelGrid, GridConfig
from .kernels import KernelModel
from .local_map import LocalMap, Pose
from .metrics import EvalReport, evaluate

log = logging.getLogger(__name__)


@dataclass
class RunOptions:
    filter_size: int = 5
    evaluate: bool = True
    map_dir: Optional[Path] = None
    map_dtype: str = "f8"
    use_dynamic: bool = True


@dataclass
class RunResult:
    grid: DirichletVoxelGrid
    report: Optional[EvalReport]
    update_times: List[float] = field(default_factory=list)
    propagation_times: List[float] = field(default_factory=list)
    dropped: List[int] = field(default_factory=list)


class Mapper:
    """Stateful semantic mapper over a stream of posed, labeled clouds."""

    def __init__(self, config: GridConfig, model: KernelModel, filter_size: int = 5):
        self.local = LocalMap(DirichletVoxelGrid(config))
        self.layer = ConvBKI(model, filter_size)

    @property
    def grid(self) -> DirichletVoxelGrid:
        return self.local.grid

    def step(self, pose: Pose, cloud: SemanticPointCloud,
             dynamic: Optional[DynamicField] = None):
        """Returns ``(map-frame cloud, propagation seconds, update seconds, dropped)``."""
        t0 = time.perf_counter()
        self.local.move_to(pose)
        if dynamic is not None:
            self.local.grid = propagate_dynamic(self.local.grid, dynamic)
        t1 = time.perf_counter()
        mapped = self.local.to_map(cloud)
        t2 = time.perf_counter()
        volume = self.layer(self.local.grid, mapped)
        t3 = time.perf_counter()
        return mapped, t1 - t0, t3 - t2, volume.dropped


def run_frames(clouds: Sequence[SemanticPointCloud], poses: Sequence[Pose], config: GridConfig,
               model: KernelModel, truths: Optional[Sequence[np.ndarray]] = None,
               fields: Optional[Sequence[Optional[DynamicField]]] = None,
               options: Optional[RunOptions] = None, class_names=()) -> RunResult:
    """Map a sequence held in memory; optionally score each frame's points on arrival."""
    options = options or RunOptions()
    mapper = Mapper(config, model, options.filter_size)
    result = RunResult(mapper.grid, None)
    preds, gts = [], []
    for i, (cloud, pose) in enumerate(zip(clouds, poses)):
        fld = fields[i] if (fields is not None and options.use_dynamic) else None
        try:
            mapped, t_prop, t_upd, dropped = mapper.step(pose, cloud, fld)
        except Exception as exc:
            raise RuntimeError(f"frame {i}: {exc}") from exc
        result.propagation_times.append(t_prop)
        result.update_times.append(t_upd)
        result.dropped.append(dropped)
        if options.evaluate and truths is not None:
            preds.append(query(mapper.grid, mapped.positions).labels)
            gts.append(np.asarray(truths[i]))
        if options.map_dir is not None:
            from .io import save_map
            Path(options.map_dir).mkdir(parents=True, exist_ok=True)
            save_map(mapper.grid, Path(options.map_dir) / f"{i:06d}.map", options.map_dtype)
        log.debug("frame %d: update %.4fs, dropped %d", i, t_upd, dropped)
    result.grid = mapper.grid
    if preds:
        fps = 1.0 / np.mean(result.update_times) if result.update_times else None
        result.report = evaluate(np.concatenate(preds), np.concatenate(gts),
                                 config.num_classes, fps, class_names)
    return result


def run_sequence(manifest, config: GridConfig, model: KernelModel,
                 options: Optional[RunOptions] = None) -> RunResult:
    """Map every frame listed in a :class:`~convbki.io.SequenceManifest`."""
    options = options or RunOptions()
    if manifest.num_classes != config.num_classes:
        raise ValueError("manifest and grid disagree on the number of classes")
    n = len(manifest.frames)
    poses = manifest.load_poses()
    clouds = _Lazy(manifest.cloud, n)
    truths = _Lazy(manifest.truth, n) if manifest.has_labels else None
    fields = _Lazy(manifest.field, n) if manifest.dynamic is not None else None
    return run_frames(clouds, poses, config, model, truths, fields, options,
                      manifest.class_names)


class _Lazy:
    """Index-loaded sequence so long runs do not hold every frame in memory."""

    def __init__(self, loader, n):
        self.loader, self.n = loader, n

    def __len__(self):
        return self.n

    def __getitem__(self, i):
        if not 0 <= i < self.n:
            raise IndexError(i)
        return self.loader(i)

    def __iter__(self):
        return (self.loader(i) for i in range(self.n))
