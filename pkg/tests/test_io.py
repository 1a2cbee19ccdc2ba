import numpy as np
import pytest

from convbki.bki import SemanticPointCloud
from convbki.dynamic import DynamicField
from convbki.grid import DirichletVoxelGrid, GridConfig
from convbki.io import (FRAME_HEADER, FormatError, SequenceManifest, load_cloud, load_config,
                        load_field, load_kernel, load_labels, load_map, load_poses, save_cloud,
                        save_field, save_kernel, save_labels, save_map, save_poses,
                        write_sequence)
from convbki.kernels import KernelModel
from convbki.local_map import yaw_pose

CFG = GridConfig(0.2, (-1, -1, -0.4), (1, 1, 0.4), 3)


def test_hard_cloud_round_trip(tmp_path, rng):
    pts = rng.uniform(-5, 5, (1, 3)).astype(np.float32)
    save_cloud(tmp_path / "a.bin", SemanticPointCloud.from_labels(pts, [2], 3))
    back = load_cloud(tmp_path / "a.bin", 3)
    assert len(back) == 1
    np.testing.assert_array_equal(back.probs, [[0, 0, 1]])
    np.testing.assert_array_equal(back.positions, pts)


def test_soft_cloud_round_trip(tmp_path, rng):
    probs = rng.dirichlet(np.ones(4), 50).astype(np.float32).astype(np.float64)
    probs /= probs.sum(axis=1, keepdims=True)
    save_cloud(tmp_path / "s.bin", SemanticPointCloud(rng.normal(size=(50, 3)), probs))
    back = load_cloud(tmp_path / "s.bin")
    assert back.labels is None
    np.testing.assert_allclose(back.probs, probs, atol=1e-6)


def test_empty_cloud(tmp_path):
    (tmp_path / "e.bin").write_bytes(b"")
    assert len(load_cloud(tmp_path / "e.bin", 5)) == 0
    with pytest.raises(FormatError):
        load_cloud(tmp_path / "e.bin")


def test_cloud_errors(tmp_path):
    p = tmp_path / "c.bin"
    save_cloud(p, SemanticPointCloud.from_labels(np.zeros((3, 3)), [0, 1, 2], 3))
    data = p.read_bytes()
    p.write_bytes(data[:-2])
    with pytest.raises(FormatError, match="payload"):
        load_cloud(p)
    p.write_bytes(b"XXXX" + data[4:])
    with pytest.raises(FormatError, match="magic"):
        load_cloud(p)
    bad = bytearray(data)
    bad[FRAME_HEADER.size + 12:FRAME_HEADER.size + 16] = np.uint32(7).tobytes()
    p.write_bytes(bytes(bad))
    with pytest.raises(FormatError, match="label"):
        load_cloud(p)
    bad = bytearray(data)
    bad[FRAME_HEADER.size:FRAME_HEADER.size + 4] = np.float32(np.nan).tobytes()
    p.write_bytes(bytes(bad))
    with pytest.raises(FormatError, match="non-finite"):
        load_cloud(p)
    p.write_bytes(data)
    with pytest.raises(FormatError, match="classes"):
        load_cloud(p, 4)


def test_labels_round_trip(tmp_path):
    save_labels(tmp_path / "l", [0, 4, 2])
    assert load_labels(tmp_path / "l").tolist() == [0, 4, 2]
    with pytest.raises(FormatError):
        load_labels(tmp_path / "l", 3)


def test_pose_file(tmp_path):
    p = tmp_path / "poses.txt"
    p.write_text("1 0 0 0 0 1 0 0 0 0 1 0\n0 -1 0 1 1 0 0 2 0 0 1 3\n")
    poses = load_poses(p)
    np.testing.assert_array_equal(poses[0].matrix(), np.eye(4))
    np.testing.assert_array_equal(poses[1].translation, [1, 2, 3])
    np.testing.assert_array_equal(poses[1].rotation, [[0, -1, 0], [1, 0, 0], [0, 0, 1]])


def test_pose_file_errors(tmp_path):
    p = tmp_path / "poses.txt"
    p.write_text("1 0 0 0 0 1.01 0 0 0 0 1 0\n")
    with pytest.raises(FormatError, match="orthonormal"):
        load_poses(p)
    p.write_text("1 0 0 0 0 1 0 0 0 0 1\n")
    with pytest.raises(FormatError, match="12"):
        load_poses(p)


def test_pose_round_trip_and_drift_correction(tmp_path):
    poses = [yaw_pose(a, (a, -a, 0.5)) for a in np.linspace(0, 3, 7)]
    save_poses(tmp_path / "p.txt", poses)
    for a, b in zip(poses, load_poses(tmp_path / "p.txt")):
        np.testing.assert_allclose(a.matrix(), b.matrix(), atol=1e-15)
    (tmp_path / "q.txt").write_text("1.0004 0 0 0 0 1 0 0 0 0 1 0\n")
    r = load_poses(tmp_path / "q.txt")[0].rotation
    np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-12)


@pytest.mark.parametrize("filled", [False, True])
def test_map_round_trip_bit_identical(tmp_path, rng, filled):
    g = DirichletVoxelGrid(CFG, origin=(0.4, -0.2, 1.0))
    if filled:
        g.alpha[...] = rng.gamma(0.3, 2.0, CFG.shape)
    save_map(g, tmp_path / "m")
    back = load_map(tmp_path / "m", CFG)
    np.testing.assert_array_equal(back.alpha, g.alpha)
    np.testing.assert_array_equal(back.origin, g.origin)
    inferred = load_map(tmp_path / "m")
    assert inferred.dims == g.dims and inferred.num_classes == 3


def test_map_compact_version(tmp_path, rng):
    g = DirichletVoxelGrid(CFG, rng.uniform(0, 3, CFG.shape))
    save_map(g, tmp_path / "m", dtype="f4")
    np.testing.assert_array_equal(load_map(tmp_path / "m").alpha,
                                  g.alpha.astype(np.float32).astype(np.float64))


def test_map_errors(tmp_path):
    save_map(DirichletVoxelGrid(CFG), tmp_path / "m")
    data = (tmp_path / "m").read_bytes()
    (tmp_path / "m").write_bytes(b"JUNK" + data[4:])
    with pytest.raises(FormatError):
        load_map(tmp_path / "m")
    (tmp_path / "m").write_bytes(data[:-8])
    with pytest.raises(FormatError):
        load_map(tmp_path / "m")
    (tmp_path / "m").write_bytes(data)
    with pytest.raises(FormatError):
        load_map(tmp_path / "m", GridConfig(0.2, (-1, -1, -0.4), (1, 1, 0.4), 4))


def test_field_round_trip(tmp_path, rng):
    fld = DynamicField(rng.normal(0, 0.1, (4, 3, 2, 3)).astype(np.float32),
                       rng.uniform(0, 1, (4, 3, 2)).astype(np.float32))
    save_field(tmp_path / "f", fld, 0.2)
    back, res = load_field(tmp_path / "f")
    assert res == 0.2
    np.testing.assert_array_equal(back.offsets, fld.offsets)
    np.testing.assert_array_equal(back.probs, fld.probs)


def test_kernel_file_round_trip(tmp_path):
    m = KernelModel("compound", 2, [[0.31, 0.72], [0.123456789012, 1.5]])
    save_kernel(tmp_path / "k.txt", m)
    np.testing.assert_array_equal(load_kernel(tmp_path / "k.txt").lengths, m.lengths)


def test_sequence_manifest(tmp_path, rng):
    clouds = [SemanticPointCloud.from_labels(rng.uniform(-1, 1, (10, 3)), rng.integers(0, 3, 10), 3)
              for _ in range(3)]
    truths = [c.labels for c in clouds]
    poses = [yaw_pose(0.1 * i, (0.2 * i, 0, 0)) for i in range(3)]
    write_sequence(tmp_path, clouds, poses, truths, ["a", "b", "c"])
    m = SequenceManifest.load(tmp_path)
    assert m.num_classes == 3 and m.has_labels and m.class_names == ["a", "b", "c"]
    np.testing.assert_array_equal(m.truth(2), truths[2])
    np.testing.assert_allclose(m.cloud(1).positions, clouds[1].positions, atol=1e-6)
    assert m.field(0) is None
    (tmp_path / "poses.txt").write_text("1 0 0 0 0 1 0 0 0 0 1 0\n")
    with pytest.raises(FormatError, match="poses"):
        SequenceManifest.load(tmp_path)


def test_config_rejects_unknown_sections(tmp_path):
    (tmp_path / "c.json").write_text('{"grid": {"resolution": 0.1}, "oops": 1}')
    with pytest.raises(FormatError):
        load_config(tmp_path / "c.json")
