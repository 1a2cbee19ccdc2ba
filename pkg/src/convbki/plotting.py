"""Figure rendering for reports. Everything writes straight to files."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .kernels import KernelModel, build_filter  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def _save(fig, path):
    fig.savefig(path)
    plt.close(fig)
    return path


def kernel_slices(model: KernelModel, filter_size: int, resolution: float, path,
                  classes=None, class_names=None):
    """Filter weights in the X-Z plane through the center (dY = 0), one panel per class."""
    bank = build_filter(model, filter_size, resolution)
    classes = list(range(model.num_classes)) if classes is None else list(classes)
    half = bank.center
    ext = resolution * (half + 0.5)
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, len(classes), figsize=(1.8 * len(classes) + 0.6, 2.0),
                                 squeeze=False)
        for ax, c in zip(axes[0], classes):
            im = ax.imshow(bank.weights[c, :, half, :].T, origin="lower", vmin=0, vmax=1,
                           cmap="viridis", extent=(-ext, ext, -ext, ext))
            ax.set_title(class_names[c] if class_names else f"class {c}")
            ax.set_xlabel("x (m)")
        axes[0, 0].set_ylabel("z (m)")
        fig.colorbar(im, ax=axes[0].tolist(), shrink=0.8)
        return _save(fig, path)


def confusion(report, path):
    cm = report.confusion_normalized
    names = report.class_names or [str(c) for c in range(len(cm))]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(0.45 * len(cm) + 2, 0.45 * len(cm) + 1.5))
        im = ax.imshow(cm, vmin=0, vmax=1, cmap="Blues")
        ax.set_xticks(range(len(cm)), names, rotation=90)
        ax.set_yticks(range(len(cm)), names)
        ax.set_xlabel("true class")
        ax.set_ylabel("predicted class")
        fig.colorbar(im, ax=ax, shrink=0.8)
        return _save(fig, path)


def loss_curve(losses, path):
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4, 2.6))
        ax.plot(np.arange(1, len(losses) + 1), losses, lw=1)
        ax.set_xlabel("step")
        ax.set_ylabel("weighted NLL")
        return _save(fig, path)


def throughput(rows, path):
    """Two panels: update time against resolution and against filter size."""
    res = sorted((r for r in rows if r["sweep"] == "resolution"), key=lambda r: -r["resolution"])
    fs = sorted((r for r in rows if r["sweep"] == "filter_size"), key=lambda r: r["filter_size"])
    with plt.rc_context(RC):
        fig, (a, b) = plt.subplots(1, 2, figsize=(6.5, 2.6))
        a.plot([r["resolution"] for r in res], [1e3 * r["seconds"] for r in res], "o-")
        a.invert_xaxis()
        a.set_xlabel("resolution (m)")
        a.set_ylabel("update time (ms)")
        b.plot([r["filter_size"] for r in fs], [1e3 * r["seconds"] for r in fs], "o-")
        b.set_xlabel("filter size")
        return _save(fig, path)


def propagation(local_times, global_times, path):
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4, 2.6))
        ax.plot(1e3 * np.asarray(local_times), label="local", lw=1)
        if global_times is not None:
            ax.plot(1e3 * np.asarray(global_times), label="global", lw=1)
        ax.set_xlabel("frame")
        ax.set_ylabel("propagation time (ms)")
        ax.legend(frameon=False)
        return _save(fig, path)


def noise_curve(rates, raw_acc, mapped_acc, path):
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4, 2.6))
        ax.plot(100 * np.asarray(rates), 100 * np.asarray(raw_acc), "s--", label="input labels")
        ax.plot(100 * np.asarray(rates), 100 * np.asarray(mapped_acc), "o-", label="mapped")
        ax.set_xlabel("corrupted labels (%)")
        ax.set_ylabel("accuracy (%)")
        ax.legend(frameon=False)
        return _save(fig, path)


def variance_bev(variance, observed, path):
    """Top-down max over height of the per-voxel variance; unobserved columns blank."""
    img = np.where(observed, variance, np.nan).astype(np.float64)
    with np.errstate(all="ignore"):
        top = np.nanmax(np.where(observed, img, -np.inf), axis=2)
    top[~observed.any(axis=2)] = np.nan
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4, 3.4))
        im = ax.imshow(top.T, origin="lower", cmap="magma")
        ax.set_xlabel("x (voxels)")
        ax.set_ylabel("y (voxels)")
        fig.colorbar(im, ax=ax, shrink=0.8, label="variance")
        return _save(fig, path)
