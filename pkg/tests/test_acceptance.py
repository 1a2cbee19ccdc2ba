"""Acceptance checks, one test per criterion.

Each test records a PASS/FAIL line, printed in the terminal summary under
"acceptance criteria", and then asserts the criterion.
"""

import time

import numpy as np

from convbki.bench import noise_sweep, propagation_sweep, throughput_sweep, time_update, \
    lidar_like_cloud
from convbki.bki import brute_force_update, update, voxelize
from convbki.dynamic import DynamicField, propagate_dynamic
from convbki.grid import DirichletVoxelGrid, GridConfig
from convbki.kernels import KernelModel, build_filter, sparse_kernel, sparse_kernel_dl
from convbki.local_map import relative_to_initial, residual_offset, round_half_away, shift_grid
from convbki.synthetic import observe, pole_world, straight_path
from convbki.training import TrainConfig, dataset_nll, loss_and_grad, make_samples, prepare, train
from helpers import MODES, fd_gradient, oracle_instance, random_pose, relative_error, \
    training_scene


def test_1_oracle_equivalence(acceptance):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(100):
        grid, cloud, model, f = oracle_instance(rng, MODES[i % 3])
        fast, slow = grid.copy(), grid.copy()
        update(fast, voxelize(cloud, fast), build_filter(model, f, grid.resolution))
        brute_force_update(slow, cloud, model)
        worst = max(worst, float(np.abs(fast.alpha - slow.alpha).max()))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and elapsed < 60
    acceptance(1, "oracle equivalence", ok,
               f"max |diff| {worst:.2e} (<= 1e-9) over 100 instances in {elapsed:.1f} s (< 60 s)")
    assert ok


def test_2_kernel_boundaries(acceptance):
    rng = np.random.default_rng(7)
    lengths = np.exp(rng.uniform(np.log(0.01), np.log(20), 200))
    at_zero = all(sparse_kernel(0.0, l) == 1.0 for l in lengths)
    beyond = all(np.all(sparse_kernel(l * np.array([1.0, 1.0 + 1e-12, 1.5, 10.0]), l) == 0.0)
                 for l in lengths)
    lo, hi = np.inf, -np.inf
    for l in lengths[:50]:
        k = sparse_kernel(np.linspace(0, 2 * l, 100_001), l)
        lo, hi = min(lo, k.min()), max(hi, k.max())
    # derivative against central differences with step 1e-5 * l
    worst = 0.0
    for l in lengths[:40]:
        d = l * np.linspace(0.01, 0.99, 99)
        h = 1e-5 * l
        fd = (sparse_kernel(d, l + h) - sparse_kernel(d, l - h)) / (2 * h)
        worst = max(worst, float(np.max(np.abs(sparse_kernel_dl(d, l) - fd) / np.abs(fd))))
    ok = at_zero and beyond and lo >= 0.0 and hi <= 1.0 and worst < 1e-5
    acceptance(2, "kernel boundary conditions", ok,
               f"k(0)=1 {at_zero}, k(d>=l)=0 {beyond}, range [{lo:.3g}, {hi:.3g}], "
               f"dk/dl rel err {worst:.2e} (< 1e-5)")
    assert ok


def test_3_end_to_end_gradient(acceptance):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(25):
        rng = np.random.default_rng(500 + seed)
        sample, model, cfg = training_scene(rng, num_classes=int(rng.integers(2, 5)),
                                            mode=MODES[seed % 3])
        prep = prepare(sample, cfg)
        weights = rng.uniform(0.5, 2.0, model.num_classes)
        _, g = loss_and_grad(prep, model, cfg, weights)
        worst = max(worst, relative_error(g, fd_gradient(prep, model, cfg, weights, h=1e-4)))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 300
    acceptance(3, "end-to-end gradient check", ok,
               f"max rel err {worst:.2e} (< 1e-4) on 25 scenes in {elapsed:.1f} s (< 300 s)")
    assert ok


def test_4_lossless_local_mapping(acceptance):
    rng = np.random.default_rng(11)
    cfg = GridConfig(0.2, (-2, -2, -1), (2, 2, 1), 4)
    bit_identical = True
    for _ in range(50):
        g = DirichletVoxelGrid(cfg, rng.gamma(0.5, 2.0, cfg.shape))
        s = rng.integers(-8, 9, 3)
        back = shift_grid(shift_grid(g, s), -s)
        keep = (slice(None),) + tuple(slice(max(0, v), n - max(0, -v)) for v, n in zip(s, g.dims))
        bit_identical &= np.array_equal(back.alpha[keep], g.alpha[keep])
    initial = random_pose(rng)
    worst = 0.0
    for _ in range(1000):
        rel = relative_to_initial(random_pose(rng), initial)
        res = float(rng.choice([0.1, 0.2, 0.25, 0.4]))
        dx = rel.translation
        o = residual_offset(dx, res)
        worst = max(worst, float(np.abs(res * round_half_away(dx / res) + o - dx).max()))
    ok = bit_identical and worst <= 1e-9
    acceptance(4, "lossless local mapping", ok,
               f"round-trip survivors bit-identical {bit_identical}, "
               f"residual identity max err {worst:.2e} (<= 1e-9) over 1000 poses")
    assert ok


def test_5_dynamic_propagation(acceptance):
    rng = np.random.default_rng(5)
    cfg = GridConfig(0.2, (0, 0, 0), (2.4, 2.0, 1.2), 5, dynamic_classes=(1, 4))
    dyn, static = [1, 4], [0, 2, 3]
    shift_ok = zero_ok = static_ok = True
    for _ in range(30):
        g = DirichletVoxelGrid(cfg, rng.gamma(0.5, 2.0, cfg.shape), origin=rng.uniform(-5, 5, 3))
        s = rng.integers(-4, 5, 3)
        moved = propagate_dynamic(g, DynamicField.uniform(g.dims, cfg.resolution * s, 1.0))
        shift_ok &= np.array_equal(moved.alpha[dyn], shift_grid(g, s).alpha[dyn])
        cleared = propagate_dynamic(g, DynamicField(rng.uniform(-0.5, 0.5, g.dims + (3,)),
                                                    np.zeros(g.dims)))
        zero_ok &= not cleared.alpha[dyn].any()
        static_ok &= (np.array_equal(moved.alpha[static], g.alpha[static])
                      and np.array_equal(cleared.alpha[static], g.alpha[static]))
    ok = shift_ok and zero_ok and static_ok
    acceptance(5, "dynamic propagation exactness", ok,
               f"integer offset == shift_grid {shift_ok}, p=0 clears dynamic {zero_ok}, "
               f"static untouched {static_ok} (30 random grids)")
    assert ok


def test_6_noise_smoothing(acceptance):
    rates, raw, mapped = noise_sweep(np.random.default_rng(6), rates=(0.2,), n_frames=10)
    gain = 100 * (mapped[0] - raw[0])
    ok = gain >= 5.0
    acceptance(6, "noise smoothing", ok,
               f"20% corruption: raw {100 * raw[0]:.1f}%, mapped {100 * mapped[0]:.1f}%, "
               f"gain {gain:.1f} pp (>= 5)")
    assert ok


def test_7_anisotropy_learning(acceptance):
    rng = np.random.default_rng(1)
    seq = observe(rng, pole_world(rng), straight_path(14, step=0.05), 1500, noise_rate=0.1)
    cfg = TrainConfig(window=5, min_bound=(-4, -4, -0.4), max_bound=(4, 4, 2.8))
    preps = [prepare(s, cfg) for s in make_samples(seq.clouds, seq.poses, seq.labels, 5)]
    nll, lengths = {}, {}
    for mode in MODES:
        result = train(preps, cfg, mode=mode, steps=400)
        nll[mode] = dataset_nll(preps, result.model, cfg, result.class_weights)
        lengths[mode] = result.model.lengths
    (gh, gv), (ph, pv) = lengths["compound"]
    shape_ok = pv > ph and gh > gv
    order_ok = (nll["compound"] <= nll["per_class"] + 1e-6
                and nll["per_class"] <= nll["single"] + 1e-6)
    ok = shape_ok and order_ok
    acceptance(7, "anisotropy learning", ok,
               f"pole l_h={ph:.3f} l_v={pv:.3f}, ground l_h={gh:.3f} l_v={gv:.3f}; NLL compound "
               f"{nll['compound']:.5f} <= per_class {nll['per_class']:.5f} <= single "
               f"{nll['single']:.5f}")
    assert ok


def test_8_throughput(acceptance):
    rng = np.random.default_rng(8)
    cfg = GridConfig(0.2, (-20, -20, -3.2), (20, 20, 3.2), 11)
    assert cfg.dims == (200, 200, 32)
    cloud = lidar_like_cloud(rng, 100_000, 11, radius=20.0)
    seconds = time_update(cfg, KernelModel.uniform("compound", 11, 0.5), 5, cloud, repeats=3)
    rows = throughput_sweep(rng, n_points=100_000, num_classes=11, repeats=3)
    res = [r["seconds"] for r in sorted((r for r in rows if r["sweep"] == "resolution"),
                                        key=lambda r: -r["resolution"])]
    fs = [r["seconds"] for r in sorted((r for r in rows if r["sweep"] == "filter_size"),
                                       key=lambda r: r["filter_size"])]
    res_ok, fs_ok = bool(np.all(np.diff(res) > 0)), bool(np.all(np.diff(fs) > 0))
    ok = seconds < 1.0 and res_ok and fs_ok
    acceptance(8, "throughput", ok,
               f"100k points into 200x200x32, C=11, f=5: {seconds:.3f} s (< 1 s); "
               f"finer resolution slower {res_ok} {np.round(res, 4).tolist()}; "
               f"larger filter slower {fs_ok} {np.round(fs, 4).tolist()}")
    assert ok


def test_9_local_vs_global(acceptance):
    # Four independent 200-frame runs. Host-level memory contention drifts on a
    # scale of seconds and is uncorrelated with frame index, so each run is
    # normalized by its own median and the frame-wise median across runs is used.
    runs = []
    for seed in range(4):
        local, _ = propagation_sweep(np.random.default_rng(90 + seed), n_frames=200,
                                     with_global=False)
        runs.append(local / np.median(local))
    profile = np.median(np.array(runs), axis=0)
    blocks = np.median(profile.reshape(4, 50), axis=1) / np.median(profile)
    _, glob = propagation_sweep(np.random.default_rng(99), n_frames=200, with_global=True)
    growth = np.median(glob[-20:]) / np.median(glob[:20])
    ok = bool(np.all(np.abs(blocks - 1.0) <= 0.2))
    acceptance(9, "local-vs-global trend", ok,
               f"local quarter medians / overall {np.round(blocks, 3).tolist()} (within +-20%); "
               f"global store last/first 20 frames x{growth:.1f}")
    assert ok
