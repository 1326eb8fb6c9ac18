import struct

import numpy as np
import pytest

from plk.camera import CameraIntrinsics, PointCloud, backproject
from plk.errors import FormatError, InvalidShape
from plk.io import (
    load_scene,
    read_json,
    read_pfm,
    read_plpc,
    read_tns,
    save_scene,
    write_csv_trace,
    write_occupancy,
    write_pfm,
    write_plpc,
    write_plpc_text,
    write_tns,
)
from plk.scene import make_scene
from plk.softquant import VoxelGridSpec


def _f32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


@pytest.mark.parametrize("shape", [(4, 5), (3, 2, 3)])
def test_pfm_round_trip(tmp_path, shape):
    img = np.random.default_rng(0).normal(size=shape)
    write_pfm(tmp_path / "x.pfm", img)
    assert np.array_equal(read_pfm(tmp_path / "x.pfm"), _f32(img))


def test_pfm_layout_is_bottom_up_little_endian(tmp_path):
    img = np.array([[1.0, 2.0], [3.0, 4.0]])
    write_pfm(tmp_path / "x.pfm", img)
    raw = (tmp_path / "x.pfm").read_bytes()
    assert raw.startswith(b"Pf\n2 2\n-1.0\n")
    assert struct.unpack("<4f", raw[-16:]) == (3.0, 4.0, 1.0, 2.0)


def test_pfm_reads_big_endian(tmp_path):
    payload = struct.pack(">2f", 5.0, 6.0)
    (tmp_path / "b.pfm").write_bytes(b"Pf\n2 1\n1.0\n" + payload)
    assert read_pfm(tmp_path / "b.pfm").tolist() == [[5.0, 6.0]]


@pytest.mark.parametrize(
    "blob,offset",
    [
        (b"P5\n2 2\n-1.0\n", 0),
        (b"Pf\n2 x\n-1.0\n", 5),
        (b"Pf\n2 2\n-1.0\n\x00\x00", 14),
        (b"Pf\n2 2\n", 7),
    ],
)
def test_pfm_errors_carry_offsets(tmp_path, blob, offset):
    p = tmp_path / "bad.pfm"
    p.write_bytes(blob)
    with pytest.raises(FormatError) as exc:
        read_pfm(p)
    assert exc.value.offset == offset
    assert str(p) in str(exc.value) and f"byte {offset}" in str(exc.value)


def test_pfm_rejects_two_channels(tmp_path):
    with pytest.raises(InvalidShape):
        write_pfm(tmp_path / "x.pfm", np.zeros((2, 2, 2)))


def test_missing_file_is_format_error(tmp_path):
    with pytest.raises(FormatError):
        read_pfm(tmp_path / "nope.pfm")


def test_plpc_round_trip(tmp_path):
    cam = CameraIntrinsics(f=3.0, cx=1.5, cy=1.0, width=4, height=3)
    cloud = backproject(np.random.default_rng(1).uniform(1, 9, (3, 4)), cam)
    write_plpc(tmp_path / "c.plpc", cloud)
    raw = (tmp_path / "c.plpc").read_bytes()
    assert raw[:16] == b"PLPC" + struct.pack("<III", 1, 12, 0)
    assert len(raw) == 16 + 12 * 20
    back = read_plpc(tmp_path / "c.plpc")
    assert np.array_equal(back.points, _f32(cloud.points))
    assert np.array_equal(back.source_pixel, cloud.source_pixel)


def test_plpc_empty(tmp_path):
    write_plpc(tmp_path / "e.plpc", PointCloud.empty())
    assert len(read_plpc(tmp_path / "e.plpc")) == 0


def test_plpc_errors(tmp_path):
    p = tmp_path / "c.plpc"
    p.write_bytes(b"PLPX" + struct.pack("<III", 1, 0, 0))
    with pytest.raises(FormatError, match="magic"):
        read_plpc(p)
    p.write_bytes(b"PLPC" + struct.pack("<III", 1, 2, 0) + b"\x00" * 20)
    with pytest.raises(FormatError) as exc:
        read_plpc(p)
    assert exc.value.offset == 36
    p.write_bytes(b"PLPC" + struct.pack("<III", 2, 0, 0))
    with pytest.raises(FormatError) as exc:
        read_plpc(p)
    assert exc.value.offset == 4


def test_plpc_text(tmp_path):
    cloud = PointCloud(np.array([[0.1, -2.0, 3.0]]), np.array([[0, 0]]))
    write_plpc_text(tmp_path / "c.txt", cloud)
    assert (tmp_path / "c.txt").read_text() == "0.100000001 -2 3\n"


def test_tns_round_trip(tmp_path):
    spec = VoxelGridSpec(origin=(-1, 0, 2), bin_size=(0.5, 0.5, 1), bins=(2, 3, 4), neighborhood="full26")
    t = np.random.default_rng(2).uniform(size=spec.bins)
    write_occupancy(tmp_path / "o.tns", t, spec)
    back, meta = read_tns(tmp_path / "o.tns")
    assert np.array_equal(back, _f32(t))
    assert meta == {"dims": [2, 3, 4], "origin": [-1.0, 0.0, 2.0], "bin_size": [0.5, 0.5, 1.0],
                    "sigma": spec.sigma, "neighborhood": "full26"}


def test_tns_size_mismatch(tmp_path):
    write_tns(tmp_path / "o.tns", np.zeros((2, 2)), {"dims": [2, 2]})
    (tmp_path / "o.tns").write_bytes(b"\x00" * 12)
    with pytest.raises(FormatError):
        read_tns(tmp_path / "o.tns")
    with pytest.raises(InvalidShape):
        write_tns(tmp_path / "p.tns", np.zeros((2, 2)), {"dims": [4]})


def test_json_error_offset(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{"a": 1,\n "b": }')
    with pytest.raises(FormatError) as exc:
        read_json(p)
    assert exc.value.offset == 15


def test_csv_trace(tmp_path):
    write_csv_trace(tmp_path / "t.csv", [1.5, 0.25])
    assert (tmp_path / "t.csv").read_text() == "iteration,loss\n0,1.5\n1,0.25\n"


def test_scene_directory_round_trip(tmp_path):
    sc = make_scene("two_planes", seed=5)
    save_scene(tmp_path / "s", sc)
    back = load_scene(tmp_path / "s")
    for name in ("image_t", "image_prev", "image_next", "gt_depth", "lidar"):
        assert np.array_equal(getattr(back, name), _f32(getattr(sc, name))), name
    assert back.cam == sc.cam and back.kind == "two_planes" and back.seed == 5
    assert np.array_equal(back.pose_to_prev.t, sc.pose_to_prev.t)


def test_writes_leave_no_temp_files(tmp_path):
    write_pfm(tmp_path / "x.pfm", np.zeros((2, 2)))
    write_pfm(tmp_path / "x.pfm", np.ones((2, 2)))
    assert [p.name for p in tmp_path.iterdir()] == ["x.pfm"]
