"""Command-line driver: ``convbki {map,train,eval,kernel-dump,bench,synth}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io, plotting
from .bki import query
from .grid import GridConfig, max_class_variance
from .kernels import KernelModel, build_filter
from .metrics import bev_project, evaluate
from .pipeline import RunOptions, run_sequence
from .training import TrainConfig, dataset_nll, make_samples, train

log = logging.getLogger("convbki")

GRID_DEFAULTS = {"resolution": 0.2, "min_bound": [-20.0, -20.0, -2.6],
                 "max_bound": [20.0, 20.0, 0.6], "prior": 1e-3, "dynamic_classes": []}


def _write_csv(path, rows, fields=None):
    rows = list(rows)
    fields = fields or list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)
    return path


def _print_rows(rows, fields):
    w = csv.DictWriter(sys.stdout, fieldnames=fields, extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})


def _grid_config(args, num_classes, file_cfg):
    g = dict(GRID_DEFAULTS)
    g.update(file_cfg.get("grid", {}))
    for key in ("resolution", "min_bound", "max_bound", "prior", "dynamic_classes"):
        val = getattr(args, key, None)
        if val is not None:
            g[key] = val
    g.pop("num_classes", None)
    return GridConfig(num_classes=num_classes, **g)


def _kernel(args, num_classes, file_cfg):
    if getattr(args, "kernel", None):
        return io.load_kernel(args.kernel)
    k = file_cfg.get("kernel", {})
    if "lengths" in k:
        return KernelModel(k.get("mode", "compound"), num_classes, np.array(k["lengths"]))
    return KernelModel.uniform(k.get("mode", getattr(args, "mode", None) or "compound"),
                               num_classes, k.get("length", 0.5))


def _file_cfg(args):
    return io.load_config(args.config) if getattr(args, "config", None) else {}


def _report_files(report, out: Path, prefix=""):
    _write_csv(out / f"{prefix}report.csv", report.to_rows())
    np.savetxt(out / f"{prefix}confusion.csv", report.confusion, fmt="%d", delimiter=",")
    (out / f"{prefix}summary.json").write_text(json.dumps(report.summary(), indent=2))
    plotting.confusion(report, out / f"{prefix}confusion.png")
    _print_rows(report.to_rows(), ["class", "iou", "precision", "recall"])
    print(f"# mIoU={report.miou:.4f} accuracy={report.accuracy:.4f} points={report.num_points}"
          + (f" update_hz={report.fps:.2f}" if report.fps else ""))


def cmd_map(args):
    manifest = io.SequenceManifest.load(args.sequence)
    file_cfg = _file_cfg(args)
    config = _grid_config(args, manifest.num_classes, file_cfg)
    model = _kernel(args, manifest.num_classes, file_cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    opts = RunOptions(filter_size=args.filter_size or file_cfg.get("filter_size", 5),
                      evaluate=manifest.has_labels,
                      map_dir=out / "maps" if args.save_maps else None,
                      use_dynamic=not args.no_dynamic)
    res = run_sequence(manifest, config, model, opts)
    io.save_map(res.grid, out / "final.map")
    _write_csv(out / "timing.csv",
               ({"frame": i, "propagation_s": p, "update_s": u, "dropped": d}
                for i, (p, u, d) in enumerate(zip(res.propagation_times, res.update_times,
                                                  res.dropped))))
    plotting.propagation(res.propagation_times, None, out / "propagation.png")
    if args.variance_out:
        vdir = Path(args.variance_out)
        vdir.mkdir(parents=True, exist_ok=True)
        var = max_class_variance(res.grid).astype(np.float32)
        np.save(vdir / "variance.npy", var)
        plotting.variance_bev(var, res.grid.observed(), vdir / "variance.png")
    if res.report is not None:
        _report_files(res.report, out)
    else:
        print(f"# mapped {len(res.update_times)} frames; no labels to evaluate")
    return 0


def _load_training(args):
    manifest = io.SequenceManifest.load(args.sequence)
    if not manifest.has_labels:
        raise SystemExit("training needs ground-truth labels in the manifest")
    file_cfg = _file_cfg(args)
    t = dict(file_cfg.get("train", {}))
    g = dict(GRID_DEFAULTS)
    g.update(file_cfg.get("grid", {}))
    for key in ("resolution", "min_bound", "max_bound", "prior"):
        if getattr(args, key, None) is not None:
            g[key] = getattr(args, key)
    t.update({k: g[k] for k in ("resolution", "min_bound", "max_bound", "prior")})
    for key in ("window", "lr", "epochs", "filter_size", "init_length"):
        if getattr(args, key, None) is not None:
            t[key] = getattr(args, key)
    cfg = TrainConfig(**t)
    poses = manifest.load_poses()
    clouds = [manifest.cloud(i) for i in range(len(manifest.frames))]
    truths = [manifest.truth(i) for i in range(len(manifest.frames))]
    samples = make_samples(clouds, poses, truths, cfg.window, start=0)
    return manifest, cfg, samples, file_cfg


def cmd_train(args):
    manifest, cfg, samples, file_cfg = _load_training(args)
    mode = args.mode or file_cfg.get("kernel", {}).get("mode", "compound")
    result = train(samples, cfg, mode=mode, steps=args.steps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.save_kernel(out / "kernel.txt", result.model)
    names = [f"l{i}" for i in range(result.model.num_params)]
    rows = [dict(step=i + 1, loss=loss, **dict(zip(names, lengths.ravel())))
            for i, (loss, lengths) in enumerate(zip(result.losses, result.lengths))]
    _write_csv(out / "loss.csv", rows, ["step", "loss"] + names)
    plotting.loss_curve(result.losses, out / "loss.png")
    plotting.kernel_slices(result.model, cfg.filter_size, cfg.resolution, out / "kernels.png",
                           class_names=manifest.class_names or None)
    final = dataset_nll(samples, result.model, cfg, result.class_weights)
    print(result.model.to_text(), end="")
    print(f"# steps={len(result.losses)} first_loss={result.losses[0]:.6f} "
          f"last_loss={result.losses[-1]:.6f} dataset_nll={final:.6f}")
    return 0


def cmd_eval(args):
    grid = io.load_map(args.map)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    C = grid.num_classes
    if args.bev_truth:
        truth_grid = io.load_map(args.bev_truth)
        pred, gt = bev_project(grid).ravel(), bev_project(truth_grid).ravel()
        keep = gt >= 0
        report = evaluate(pred[keep], gt[keep], C)
    else:
        cloud = io.load_cloud(args.cloud, C)
        truth = io.load_labels(args.labels, C) if args.labels else cloud.labels
        if truth is None:
            raise SystemExit("need --labels for a soft-probability frame")
        report = evaluate(query(grid, cloud.positions).labels, truth, C)
    _report_files(report, out)
    return 0


def cmd_kernel_dump(args):
    model = io.load_kernel(args.kernel)
    bank = build_filter(model, args.filter_size, args.resolution)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    half = bank.center
    off = args.resolution * (half - np.arange(args.filter_size))
    rows = [{"class": c, "dx": off[i], "dz": off[k], "weight": bank.weights[c, i, half, k]}
            for c in range(model.num_classes) for i in range(args.filter_size)
            for k in range(args.filter_size)]
    _write_csv(out / "kernel_slices.csv", rows)
    plotting.kernel_slices(model, args.filter_size, args.resolution, out / "kernel_slices.png")
    _print_rows(rows, ["class", "dx", "dz", "weight"])
    return 0


def cmd_bench(args):
    from .bench import noise_sweep, propagation_sweep, throughput_sweep

    rng = np.random.default_rng(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = throughput_sweep(rng, n_points=args.points, num_classes=args.classes,
                            repeats=args.repeats)
    _write_csv(out / "throughput.csv", rows)
    plotting.throughput(rows, out / "throughput.png")
    _print_rows(rows, ["sweep", "resolution", "filter_size", "dims", "seconds", "hz"])
    res = [r["seconds"] for r in sorted((r for r in rows if r["sweep"] == "resolution"),
                                        key=lambda r: -r["resolution"])]
    fs = [r["seconds"] for r in sorted((r for r in rows if r["sweep"] == "filter_size"),
                                       key=lambda r: r["filter_size"])]
    print(f"# finer resolution slower: {all(np.diff(res) > 0)}; "
          f"larger filter slower: {all(np.diff(fs) > 0)}")
    local, glob = propagation_sweep(rng, n_frames=args.frames, num_classes=args.classes)
    _write_csv(out / "propagation.csv",
               ({"frame": i, "local_s": a, "global_s": b} for i, (a, b) in enumerate(zip(local, glob))))
    plotting.propagation(local, glob, out / "propagation.png")
    print(f"# propagation local median {1e3 * np.median(local):.3f} ms, "
          f"global first/last {1e3 * glob[0]:.3f}/{1e3 * glob[-1]:.3f} ms")
    rates, raw, mapped = noise_sweep(rng)
    _write_csv(out / "noise.csv", ({"noise": r, "raw_accuracy": a, "mapped_accuracy": b}
                                   for r, a, b in zip(rates, raw, mapped)))
    plotting.noise_curve(rates, raw, mapped, out / "noise.png")
    return 0


def cmd_synth(args):
    from .synthetic import city_scene, observe, pole_world, straight_path

    rng = np.random.default_rng(args.seed)
    if args.scene == "pole":
        scene, names = pole_world(rng), ["ground", "pole"]
    else:
        scene = city_scene(rng)
        names = ["road", "sidewalk", "grass", "building", "pole", "vehicle"]
    seq = observe(rng, scene, straight_path(args.frames, args.step), args.points, args.noise)
    io.write_sequence(args.out, seq.clouds, seq.poses, seq.labels, names)
    print(f"# wrote {args.frames} frames to {args.out}")
    return 0


def _vec3(s):
    vals = [float(v) for v in s.split(",")]
    if len(vals) != 3:
        raise argparse.ArgumentTypeError("expected x,y,z")
    return vals


def build_parser():
    p = argparse.ArgumentParser(prog="convbki", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def grid_flags(sp):
        sp.add_argument("--config", help="JSON config with grid/train/kernel sections")
        sp.add_argument("--resolution", type=float)
        sp.add_argument("--min-bound", dest="min_bound", type=_vec3)
        sp.add_argument("--max-bound", dest="max_bound", type=_vec3)
        sp.add_argument("--prior", type=float)

    sp = sub.add_parser("map", help="map a sequence and score it")
    sp.add_argument("sequence")
    sp.add_argument("--out", required=True)
    sp.add_argument("--kernel", help="kernel text file")
    sp.add_argument("--mode", choices=["single", "per_class", "compound"])
    sp.add_argument("--filter-size", type=int)
    sp.add_argument("--dynamic-classes", dest="dynamic_classes", type=lambda s: [int(v) for v in s.split(",")])
    sp.add_argument("--no-dynamic", action="store_true")
    sp.add_argument("--save-maps", action="store_true")
    sp.add_argument("--variance-out")
    grid_flags(sp)
    sp.set_defaults(func=cmd_map)

    sp = sub.add_parser("train", help="fit kernel lengths")
    sp.add_argument("sequence")
    sp.add_argument("--out", required=True)
    sp.add_argument("--mode", choices=["single", "per_class", "compound"])
    sp.add_argument("--window", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--filter-size", type=int)
    sp.add_argument("--init-length", type=float)
    grid_flags(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="score a saved map")
    sp.add_argument("map")
    sp.add_argument("--out", required=True)
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--cloud", help="frame file in map coordinates")
    g.add_argument("--bev-truth", help="ground-truth map for top-down comparison")
    sp.add_argument("--labels", help="ground-truth label file for --cloud")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("kernel-dump", help="write filter slices at dY=0")
    sp.add_argument("kernel")
    sp.add_argument("--out", required=True)
    sp.add_argument("--filter-size", type=int, default=5)
    sp.add_argument("--resolution", type=float, default=0.2)
    sp.set_defaults(func=cmd_kernel_dump)

    sp = sub.add_parser("bench", help="throughput, propagation and noise sweeps")
    sp.add_argument("--out", required=True)
    sp.add_argument("--points", type=int, default=100_000)
    sp.add_argument("--classes", type=int, default=11)
    sp.add_argument("--frames", type=int, default=200)
    sp.add_argument("--repeats", type=int, default=3)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("synth", help="write a synthetic labeled sequence")
    sp.add_argument("out")
    sp.add_argument("--scene", choices=["city", "pole"], default="city")
    sp.add_argument("--frames", type=int, default=20)
    sp.add_argument("--points", type=int, default=8000)
    sp.add_argument("--step", type=float, default=0.3)
    sp.add_argument("--noise", type=float, default=0.2)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_synth)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (io.FormatError, ValueError, RuntimeError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
