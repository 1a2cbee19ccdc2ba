"""Sparse kernel, its length derivative, and depthwise filter construction."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

TWO_PI = 2.0 * np.pi


class KernelMode(str, Enum):
    SINGLE = "single"
    PER_CLASS = "per_class"
    COMPOUND = "compound"


def sparse_kernel(d, length):
    """Compactly supported kernel: 1 at ``d = 0``, exactly 0 for ``d >= length``.

    k(d) = (2 + cos(2 pi u)) / 3 * (1 - u) + sin(2 pi u) / (2 pi),  u = d / length

    Evaluated in ``v = 1 - u`` so that the near-cancellation towards the
    support edge, where k ~ v^5, keeps full relative precision.
    """
    length = np.asarray(length, dtype=np.float64)
    if np.any(length <= 0):
        raise ValueError("kernel length must be positive")
    u = np.asarray(d, dtype=np.float64) / length
    inside = u < 1.0
    v = np.where(inside, 1.0 - u, 0.0)
    k = (2.0 + np.cos(TWO_PI * v)) / 3.0 * v - np.sin(TWO_PI * v) / TWO_PI
    # leftover rounding can still push k a hair outside [0, 1]
    return np.where(inside, np.clip(k, 0.0, 1.0), 0.0)


def sparse_kernel_dl(d, length):
    """Partial derivative of :func:`sparse_kernel` with respect to ``length``."""
    length = np.asarray(length, dtype=np.float64)
    if np.any(length <= 0):
        raise ValueError("kernel length must be positive")
    u = np.asarray(d, dtype=np.float64) / length
    inside = u < 1.0
    u = np.where(inside, u, 1.0)
    v = 1.0 - u
    # dk/du = -(2 pi / 3)(1 - u) sin(2 pi u) + (2 / 3)(cos(2 pi u) - 1), written in v
    dk_du = (TWO_PI / 3.0) * v * np.sin(TWO_PI * v) - (4.0 / 3.0) * np.sin(np.pi * v) ** 2
    # du/dl = -u / l
    return np.where(inside, dk_du * (-u / length), 0.0)


def compound_kernel(delta, length_h, length_v):
    """Product of a horizontal-plane kernel and a vertical-axis kernel."""
    delta = np.asarray(delta, dtype=np.float64)
    dh = np.hypot(delta[..., 0], delta[..., 1])
    dv = np.abs(delta[..., 2])
    return sparse_kernel(dh, length_h) * sparse_kernel(dv, length_v)


@dataclass
class KernelModel:
    """Learnable kernel lengths (meters).

    ``lengths`` has shape ``(1,)`` for single, ``(C,)`` for per-class and
    ``(C, 2)`` (horizontal, vertical) for compound kernels.
    """

    mode: KernelMode
    num_classes: int
    lengths: np.ndarray

    def __post_init__(self):
        self.mode = KernelMode(self.mode)
        self.lengths = np.array(self.lengths, dtype=np.float64)
        expected = {
            KernelMode.SINGLE: (1,),
            KernelMode.PER_CLASS: (self.num_classes,),
            KernelMode.COMPOUND: (self.num_classes, 2),
        }[self.mode]
        if self.lengths.shape != expected:
            raise ValueError(f"{self.mode.value} kernel needs lengths of shape {expected}, "
                             f"got {self.lengths.shape}")
        if not np.all(np.isfinite(self.lengths)) or np.any(self.lengths <= 0):
            raise ValueError("kernel lengths must be positive and finite")

    @classmethod
    def uniform(cls, mode, num_classes: int, length: float = 0.5) -> "KernelModel":
        mode = KernelMode(mode)
        shape = {KernelMode.SINGLE: (1,), KernelMode.PER_CLASS: (num_classes,),
                 KernelMode.COMPOUND: (num_classes, 2)}[mode]
        return cls(mode, num_classes, np.full(shape, float(length)))

    @property
    def num_params(self) -> int:
        return self.lengths.size

    @property
    def log_lengths(self) -> np.ndarray:
        return np.log(self.lengths).ravel()

    def with_log_lengths(self, theta) -> "KernelModel":
        return KernelModel(self.mode, self.num_classes,
                           np.exp(np.asarray(theta, dtype=np.float64)).reshape(self.lengths.shape))

    def class_lengths(self) -> np.ndarray:
        """Lengths broadcast to one row per class: ``(C,)`` or ``(C, 2)``."""
        if self.mode is KernelMode.SINGLE:
            return np.full(self.num_classes, self.lengths[0])
        return self.lengths

    def param_index(self) -> np.ndarray:
        """Flat parameter index for each (class, factor): shape ``(C, n)``."""
        if self.mode is KernelMode.SINGLE:
            return np.zeros((self.num_classes, 1), dtype=np.int64)
        if self.mode is KernelMode.PER_CLASS:
            return np.arange(self.num_classes)[:, None]
        return np.arange(2 * self.num_classes).reshape(self.num_classes, 2)

    def evaluate(self, delta, cls: int):
        """Kernel value for class ``cls`` at displacement(s) ``delta`` (..., 3)."""
        delta = np.asarray(delta, dtype=np.float64)
        lengths = self.class_lengths()[cls]
        if self.mode is KernelMode.COMPOUND:
            return compound_kernel(delta, lengths[0], lengths[1])
        return sparse_kernel(np.linalg.norm(delta, axis=-1), lengths)

    def to_text(self) -> str:
        lines = [f"mode = {self.mode.value}", f"num_classes = {self.num_classes}"]
        if self.mode is KernelMode.SINGLE:
            lines.append(f"length = {_fmt(self.lengths[0])}")
        elif self.mode is KernelMode.PER_CLASS:
            lines += [f"length.{c} = {_fmt(v)}" for c, v in enumerate(self.lengths)]
        else:
            for c, (h, v) in enumerate(self.lengths):
                lines.append(f"length_h.{c} = {_fmt(h)}")
                lines.append(f"length_v.{c} = {_fmt(v)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "KernelModel":
        kv = {}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"malformed kernel line: {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            kv[key] = value
        try:
            mode = KernelMode(kv["mode"])
            C = int(kv["num_classes"])
            if mode is KernelMode.SINGLE:
                lengths = [float(kv["length"])]
            elif mode is KernelMode.PER_CLASS:
                lengths = [float(kv[f"length.{c}"]) for c in range(C)]
            else:
                lengths = [[float(kv[f"length_h.{c}"]), float(kv[f"length_v.{c}"])]
                           for c in range(C)]
        except KeyError as exc:
            raise ValueError(f"kernel block missing key {exc}") from None
        return cls(mode, C, np.array(lengths))


def _fmt(x: float) -> str:
    # shortest decimal that round-trips the float64 exactly
    return repr(float(x))


@dataclass(frozen=True)
class FilterBank:
    """Depthwise filter weights ``(C, f, f, f)`` built for one resolution."""

    weights: np.ndarray
    size: int
    resolution: float

    @property
    def center(self) -> int:
        return (self.size - 1) // 2


def filter_offsets(size: int, resolution: float) -> np.ndarray:
    """Displacement of every filter cell from the center, ``(f, f, f, 3)`` meters."""
    if size < 1 or size % 2 == 0:
        raise ValueError(f"filter size must be odd and >= 1, got {size}")
    half = (size - 1) / 2
    ax = resolution * (half - np.arange(size))
    return np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1)


def build_filter(model: KernelModel, size: int, resolution: float) -> FilterBank:
    delta = filter_offsets(size, resolution)
    weights = np.stack([model.evaluate(delta, c) for c in range(model.num_classes)])
    weights.setflags(write=False)
    return FilterBank(weights, size, float(resolution))


def filter_log_gradients(model: KernelModel, size: int, resolution: float) -> np.ndarray:
    """Derivative of each class filter w.r.t. its own log-lengths.

    Returns ``(C, n, f, f, f)`` with ``n = 2`` for compound kernels (horizontal,
    vertical) and ``n = 1`` otherwise; pair with :meth:`KernelModel.param_index`.
    """
    delta = filter_offsets(size, resolution)
    lengths = model.class_lengths()
    C = model.num_classes
    if model.mode is KernelMode.COMPOUND:
        dh = np.hypot(delta[..., 0], delta[..., 1])
        dv = np.abs(delta[..., 2])
        out = np.empty((C, 2) + dh.shape)
        for c in range(C):
            lh, lv = lengths[c]
            kh, kv = sparse_kernel(dh, lh), sparse_kernel(dv, lv)
            out[c, 0] = sparse_kernel_dl(dh, lh) * lh * kv
            out[c, 1] = kh * sparse_kernel_dl(dv, lv) * lv
        return out
    d = np.linalg.norm(delta, axis=-1)
    return np.stack([(sparse_kernel_dl(d, lengths[c]) * lengths[c])[None] for c in range(C)])
