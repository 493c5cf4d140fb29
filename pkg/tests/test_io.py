import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from refpose.errors import FormatError
from refpose.geom import CameraIntrinsics, PointCloud, Pose, random_rotation
from refpose.synth.evaluate import EvalConfig, eval_run
from refpose.toolkit.io import (
    read_cloud,
    read_color,
    read_depth,
    read_intrinsics,
    read_mask,
    read_model,
    read_pose,
    read_report,
    read_weights,
    write_cloud,
    write_color,
    write_depth,
    write_intrinsics,
    write_mask,
    write_model,
    write_pose,
    write_report,
    write_weights,
)

FIXTURES = Path(__file__).parent / "fixtures"
tmp_ok = settings(suppress_health_check=[HealthCheck.function_scoped_fixture], max_examples=25)


@tmp_ok
@given(st.integers(0, 2**32 - 1))
def test_pose_round_trip(tmp_path, seed):
    rng = np.random.default_rng(seed)
    p = Pose(random_rotation(rng), rng.normal(size=3))
    write_pose(p, tmp_path / "p.json")
    q = read_pose(tmp_path / "p.json")
    assert np.array_equal(p.rotation, q.rotation) and np.array_equal(p.translation, q.translation)


def test_minimal_pose_fixture():
    p = read_pose(FIXTURES / "minimal_pose.json")
    np.testing.assert_array_equal(p.rotation, [[0, -1, 0], [1, 0, 0], [0, 0, 1]])
    np.testing.assert_array_equal(p.translation, [0.1, -0.05, 0.75])


def test_pose_errors(tmp_path):
    f = tmp_path / "p.json"
    f.write_text('{"frame": "object_from_camera", "rotation": [], "translation": []}')
    with pytest.raises(FormatError, match="frame"):
        read_pose(f)
    f.write_text('{"frame": "camera_from_object",\n "rotation": [[1, 0, 0]]')
    with pytest.raises(FormatError, match="line 2"):
        read_pose(f)
    f.write_text('{"frame": "camera_from_object", "rotation": [[1,0,0],[0,1,0]], "translation": [0,0,0]}')
    with pytest.raises(FormatError, match="rotation"):
        read_pose(f)
    with pytest.raises(FormatError, match="existing"):
        read_pose(tmp_path / "missing.json")


def test_intrinsics_round_trip(tmp_path):
    intr = CameraIntrinsics(fx=572.4114, fy=573.57043, cx=325.2611, cy=242.04899, width=640, height=480)
    write_intrinsics(intr, tmp_path / "k.json")
    assert read_intrinsics(tmp_path / "k.json") == intr
    (tmp_path / "bad.json").write_text('{"fx": 1, "fy": 1, "cx": 1, "cy": 1, "width": 2.5, "height": 4}')
    with pytest.raises(FormatError, match="width"):
        read_intrinsics(tmp_path / "bad.json")


def test_image_round_trips(tmp_path, rng):
    mm = rng.integers(0, 65536, size=(31, 47)).astype(np.uint16)
    write_depth(mm / 1000.0, tmp_path / "d.png")
    np.testing.assert_array_equal(read_depth(tmp_path / "d.png"), mm)
    mask = rng.uniform(size=(31, 47)) < 0.3
    write_mask(mask, tmp_path / "m.png")
    np.testing.assert_array_equal(read_mask(tmp_path / "m.png"), mask)
    img = rng.integers(0, 256, size=(31, 47, 3)).astype(np.uint8)
    write_color(img, tmp_path / "c.png")
    np.testing.assert_array_equal(read_color(tmp_path / "c.png"), img)


def test_image_errors(tmp_path, rng):
    write_color(np.zeros((4, 4, 3), np.uint8), tmp_path / "c.png")
    with pytest.raises(FormatError, match="16-bit"):
        read_depth(tmp_path / "c.png")
    (tmp_path / "junk.png").write_bytes(b"not an image")
    with pytest.raises(FormatError, match="byte 0"):
        read_mask(tmp_path / "junk.png")
    with pytest.raises(ValueError):
        write_depth(np.full((2, 2), 70.0), tmp_path / "far.png")


def test_cloud_round_trips(tmp_path, rng):
    c = PointCloud(rng.normal(size=(50, 3)) * 10.0 ** rng.integers(-8, 3, size=(50, 1)))
    write_cloud(c, tmp_path / "a.txt")
    b = read_cloud(tmp_path / "a.txt")
    assert np.array_equal(b.points, c.points) and b.pixel_coords is None
    c = PointCloud(rng.normal(size=(5, 3)), rng.integers(0, 640, size=(5, 2)))
    write_cloud(c, tmp_path / "b.txt")
    b = read_cloud(tmp_path / "b.txt")
    assert np.array_equal(b.points, c.points) and np.array_equal(b.pixel_coords, c.pixel_coords)


def test_cloud_errors_name_the_line(tmp_path):
    f = tmp_path / "c.txt"
    f.write_text("# x y z\n0 0 0\n1 2\n")
    with pytest.raises(FormatError, match="line 3"):
        read_cloud(f)
    f.write_text("0 0 0\n1 nan 2\n")
    with pytest.raises(FormatError, match="line 2"):
        read_cloud(f)
    f.write_text("# empty\n")
    with pytest.raises(FormatError, match="at least one point"):
        read_cloud(f)


def test_weights_round_trip(tmp_path, rng):
    t = {"a.weight": rng.normal(size=(3, 4)).astype(np.float32), "b": rng.normal(size=7).astype(np.float32),
         "scalar": np.float32(2.5).reshape(())}
    write_weights(t, tmp_path / "w.bin", {"k": [1, 2]})
    back, cfg = read_weights(tmp_path / "w.bin")
    assert list(back) == list(t) and cfg == {"k": [1, 2]}
    for k in t:
        assert back[k].dtype == np.float32 and back[k].tobytes() == t[k].tobytes()


def test_truncated_weights_name_the_tensor(tmp_path, rng):
    t = {"first": rng.normal(size=4), "second.weight": rng.normal(size=(5, 6))}
    write_weights(t, tmp_path / "w.bin")
    raw = (tmp_path / "w.bin").read_bytes()
    (tmp_path / "cut.bin").write_bytes(raw[:-10])
    with pytest.raises(FormatError, match="second.weight") as info:
        read_weights(tmp_path / "cut.bin")
    assert info.value.location.startswith("byte ")
    (tmp_path / "extra.bin").write_bytes(raw + b"\0")
    with pytest.raises(FormatError, match="end of file"):
        read_weights(tmp_path / "extra.bin")
    (tmp_path / "magic.bin").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError, match="byte 0"):
        read_weights(tmp_path / "magic.bin")


def test_model_round_trip(tmp_path, tiny_weights):
    from refpose.align import AlignerWeights, init_aligner
    from refpose.seqmodel.weights import AlignerConfig

    acfg = AlignerConfig(dim=tiny_weights.config.feat_dim, blocks=1)
    aw = AlignerWeights(init_aligner(acfg, 1), init_aligner(acfg, 2), heads=4)
    write_model(tiny_weights, aw, tmp_path / "m.bin")
    w, a = read_model(tmp_path / "m.bin")
    assert w.config == tiny_weights.config
    assert all(np.array_equal(w[k], tiny_weights[k]) for k in tiny_weights.tensors)
    assert all(np.array_equal(a.initial[k], aw.initial[k]) for k in aw.initial)
    assert all(np.array_equal(a.iterative[k], aw.iterative[k]) for k in aw.iterative)


def test_report_round_trip(tmp_path):
    report = eval_run(EvalConfig(n_pairs=1, n_points=256))
    write_report(report, tmp_path / "r.json")
    body = read_report(tmp_path / "r.json")
    assert body == json.loads(json.dumps(report.body()))
    assert "seconds" in json.loads((tmp_path / "r.timings.json").read_text())
    (tmp_path / "bad.json").write_text('{"schema_version": 1}')
    with pytest.raises(FormatError, match="config"):
        read_report(tmp_path / "bad.json")
