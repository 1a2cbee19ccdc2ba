"""Binary and text formats: frames, poses, maps, dynamic fields, configs."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .bki import SemanticPointCloud
from .dynamic import DynamicField
from .grid import DirichletVoxelGrid, GridConfig
from .kernels import KernelModel
from .local_map import Pose


class FormatError(ValueError):
    pass


FRAME_MAGIC = b"CBKI"
MAP_MAGIC = b"CBKM"
FIELD_MAGIC = b"CBKD"
FRAME_HEADER = struct.Struct("<4sIIIB")
MAP_HEADER = struct.Struct("<4sId3II3d")
FIELD_HEADER = struct.Struct("<4sI3Id")

HARD, SOFT = 0, 1


# frames

def save_cloud(path, cloud: SemanticPointCloud, hard: Optional[bool] = None):
    """Write a frame; hard-label mode is used when the cloud carries labels."""
    hard = cloud.labels is not None if hard is None else hard
    n, C = len(cloud), cloud.num_classes
    if hard:
        if cloud.labels is None:
            raise ValueError("hard-label frame needs labels")
        rec = np.zeros(n, dtype=[("xyz", "<f4", 3), ("label", "<u4")])
        rec["label"] = cloud.labels
    else:
        rec = np.zeros(n, dtype=[("xyz", "<f4", 3), ("probs", "<f4", C)])
        rec["probs"] = cloud.probs
    rec["xyz"] = cloud.positions
    with open(path, "wb") as fh:
        fh.write(FRAME_HEADER.pack(FRAME_MAGIC, 1, n, C, HARD if hard else SOFT))
        fh.write(rec.tobytes())


def load_cloud(path, num_classes: Optional[int] = None) -> SemanticPointCloud:
    data = Path(path).read_bytes()
    if len(data) == 0:
        if num_classes is None:
            raise FormatError(f"{path}: empty file and no class count given")
        return SemanticPointCloud.empty(num_classes)
    if len(data) < FRAME_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, n, C, mode = FRAME_HEADER.unpack_from(data)
    if magic != FRAME_MAGIC or version != 1:
        raise FormatError(f"{path}: bad magic/version {magic!r}/{version}")
    if num_classes is not None and C != num_classes:
        raise FormatError(f"{path}: file has {C} classes, expected {num_classes}")
    if mode == HARD:
        dt = np.dtype([("xyz", "<f4", 3), ("label", "<u4")])
    elif mode == SOFT:
        dt = np.dtype([("xyz", "<f4", 3), ("probs", "<f4", C)])
    else:
        raise FormatError(f"{path}: unknown record mode {mode}")
    body = len(data) - FRAME_HEADER.size
    if body != n * dt.itemsize:
        raise FormatError(f"{path}: {n} records of {dt.itemsize} bytes != {body} payload bytes")
    rec = np.frombuffer(data, dtype=dt, offset=FRAME_HEADER.size)
    xyz = rec["xyz"].astype(np.float64)
    if not np.all(np.isfinite(xyz)):
        raise FormatError(f"{path}: non-finite coordinate")
    if mode == HARD:
        labels = rec["label"].astype(np.int64)
        if labels.size and labels.max() >= C:
            raise FormatError(f"{path}: label {labels.max()} >= {C}")
        return SemanticPointCloud.from_labels(xyz, labels, C)
    probs = rec["probs"].astype(np.float64)
    probs /= np.maximum(probs.sum(axis=1, keepdims=True), 1e-30)
    return SemanticPointCloud(xyz, probs)


def save_labels(path, labels):
    np.asarray(labels, dtype="<u4").tofile(path)


def load_labels(path, num_classes: Optional[int] = None) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) % 4:
        raise FormatError(f"{path}: size {len(raw)} is not a multiple of 4")
    labels = np.frombuffer(raw, dtype="<u4").astype(np.int64)
    if num_classes is not None and labels.size and labels.max() >= num_classes:
        raise FormatError(f"{path}: label {labels.max()} >= {num_classes}")
    return labels


# poses (KITTI odometry convention: 3x4 row-major per line)

def load_poses(path, tol: float = 1e-3) -> List[Pose]:
    poses = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        vals = line.split()
        if len(vals) != 12:
            raise FormatError(f"{path}:{lineno}: expected 12 values, got {len(vals)}")
        m = np.array(vals, dtype=np.float64).reshape(3, 4)
        r = m[:, :3]
        err = np.abs(r.T @ r - np.eye(3)).max()
        if not err <= tol or np.linalg.det(r) <= 0:
            raise FormatError(f"{path}:{lineno}: rotation not orthonormal (error {err:.3g})")
        if err > 0:
            # snap small numeric drift back onto SO(3)
            u, _, vt = np.linalg.svd(r)
            r = u @ vt
        poses.append(Pose(r, m[:, 3]))
    return poses


def save_poses(path, poses):
    with open(path, "w") as fh:
        for p in poses:
            fh.write(" ".join(repr(float(v)) for v in p.matrix()[:3].ravel()) + "\n")


# maps

def save_map(grid: DirichletVoxelGrid, path, dtype: str = "f8"):
    """Write a grid; ``dtype='f4'`` gives the compact version-1 layout."""
    version = {"f4": 1, "f8": 2}[dtype]
    with open(path, "wb") as fh:
        fh.write(MAP_HEADER.pack(MAP_MAGIC, version, grid.resolution, *grid.dims,
                                 grid.num_classes, *grid.origin))
        fh.write(np.ascontiguousarray(grid.alpha, dtype="<" + dtype).tobytes())


def load_map(path, config: Optional[GridConfig] = None) -> DirichletVoxelGrid:
    """Read a grid. Without ``config`` one is rebuilt with bounds at the stored origin."""
    data = Path(path).read_bytes()
    if len(data) < MAP_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, res, dx, dy, dz, C, ox, oy, oz = MAP_HEADER.unpack_from(data)
    if magic != MAP_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version not in (1, 2):
        raise FormatError(f"{path}: unsupported version {version}")
    dt = "<f4" if version == 1 else "<f8"
    dims = (dx, dy, dz)
    count = C * dx * dy * dz
    if len(data) - MAP_HEADER.size != count * np.dtype(dt).itemsize:
        raise FormatError(f"{path}: payload size does not match header")
    alpha = np.frombuffer(data, dtype=dt, offset=MAP_HEADER.size).astype(np.float64)
    origin = np.array([ox, oy, oz])
    if config is None:
        config = GridConfig(res, origin, origin + res * np.array(dims), C)
    elif config.dims != dims or config.num_classes != C or config.resolution != res:
        raise FormatError(f"{path}: map layout does not match the given grid config")
    return DirichletVoxelGrid(config, alpha.reshape((C,) + dims), origin)


# dynamic fields

def save_field(path, fld: DynamicField, resolution: float):
    dims = fld.probs.shape
    with open(path, "wb") as fh:
        fh.write(FIELD_HEADER.pack(FIELD_MAGIC, 1, *dims, resolution))
        fh.write(np.ascontiguousarray(fld.offsets, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(fld.probs, dtype="<f4").tobytes())


def load_field(path, voxel_units: bool = False):
    """Returns ``(field, resolution)``."""
    data = Path(path).read_bytes()
    if len(data) < FIELD_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, dx, dy, dz, res = FIELD_HEADER.unpack_from(data)
    if magic != FIELD_MAGIC or version != 1:
        raise FormatError(f"{path}: bad magic/version")
    n = dx * dy * dz
    if len(data) - FIELD_HEADER.size != 16 * n:
        raise FormatError(f"{path}: payload size does not match header")
    off = np.frombuffer(data, "<f4", 3 * n, FIELD_HEADER.size).astype(np.float64)
    probs = np.frombuffer(data, "<f4", n, FIELD_HEADER.size + 12 * n).astype(np.float64)
    return DynamicField(off.reshape(dx, dy, dz, 3), probs.reshape(dx, dy, dz), voxel_units), res


# kernels

def save_kernel(path, model: KernelModel):
    Path(path).write_text(model.to_text())


def load_kernel(path) -> KernelModel:
    return KernelModel.from_text(Path(path).read_text())


# sequences

@dataclass
class SequenceManifest:
    """A directory with ``manifest.json`` listing frames and their side files.

    Keys: ``num_classes``, ``class_names``, ``frames``, ``poses`` and optional
    ``labels`` (ground-truth label files) and ``dynamic`` (field files), each
    a list parallel to ``frames``.
    """

    root: Path
    num_classes: int
    frames: List[str]
    poses: str
    class_names: List[str] = field(default_factory=list)
    labels: Optional[List[str]] = None
    dynamic: Optional[List[str]] = None

    @classmethod
    def load(cls, root) -> "SequenceManifest":
        root = Path(root)
        spec = json.loads((root / "manifest.json").read_text())
        m = cls(root, int(spec["num_classes"]), list(spec["frames"]), spec["poses"],
                list(spec.get("class_names", [])), spec.get("labels"), spec.get("dynamic"))
        m.validate()
        return m

    def validate(self):
        n = len(self.frames)
        for name in ("labels", "dynamic"):
            lst = getattr(self, name)
            if lst is not None and len(lst) != n:
                raise FormatError(f"manifest '{name}' has {len(lst)} entries for {n} frames")
        if self.class_names and len(self.class_names) != self.num_classes:
            raise FormatError("class_names length does not match num_classes")
        poses = self.load_poses()
        if len(poses) != n:
            raise FormatError(f"{len(poses)} poses for {n} frames")

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    def load_poses(self) -> List[Pose]:
        return load_poses(self.root / self.poses)

    def cloud(self, i: int) -> SemanticPointCloud:
        return load_cloud(self.root / self.frames[i], self.num_classes)

    def truth(self, i: int) -> np.ndarray:
        return load_labels(self.root / self.labels[i], self.num_classes)

    def field(self, i: int):
        if self.dynamic is None or self.dynamic[i] is None:
            return None
        return load_field(self.root / self.dynamic[i])[0]

    def save(self):
        spec = {"num_classes": self.num_classes, "class_names": self.class_names,
                "frames": self.frames, "poses": self.poses}
        if self.labels is not None:
            spec["labels"] = self.labels
        if self.dynamic is not None:
            spec["dynamic"] = self.dynamic
        (self.root / "manifest.json").write_text(json.dumps(spec, indent=2))


def write_sequence(root, clouds, poses, truths=None, class_names=(), fields=None,
                   resolution: float = 0.2) -> SequenceManifest:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    frames, labels, dyn = [], [], []
    for i, cloud in enumerate(clouds):
        frames.append(f"{i:06d}.bin")
        save_cloud(root / frames[-1], cloud)
        if truths is not None:
            labels.append(f"{i:06d}.label")
            save_labels(root / labels[-1], truths[i])
        if fields is not None:
            dyn.append(f"{i:06d}.field")
            save_field(root / dyn[-1], fields[i], resolution)
    save_poses(root / "poses.txt", poses)
    m = SequenceManifest(root, clouds[0].num_classes, frames, "poses.txt", list(class_names),
                         labels if truths is not None else None,
                         dyn if fields is not None else None)
    m.save()
    return m


# config

def load_config(path) -> dict:
    """JSON config with optional ``grid``, ``train`` and ``kernel`` sections."""
    cfg = json.loads(Path(path).read_text())
    unknown = set(cfg) - {"grid", "train", "kernel", "filter_size"}
    if unknown:
        raise FormatError(f"{path}: unknown config sections {sorted(unknown)}")
    return cfg
