import struct

import numpy as np
import pytest

from wxseg.errors import DataError, FormatError
from wxseg.pcio import (
    LabeledScan,
    PointCloud,
    read_labels,
    read_scan,
    write_labels,
    write_scan,
)
from wxseg.synth import ClassSchema, default_schema


def test_read_scan_empty_file(tmp_path):
    f = tmp_path / "empty.bin"
    f.write_bytes(b"")
    cloud = read_scan(f)
    assert cloud.count == 0
    assert cloud.points.shape == (0, 4)


def test_read_scan_two_points_from_constructed_buffer(tmp_path):
    buf = struct.pack("<8f", 1.0, 0.0, 0.0, 0.5, 0.0, 1.0, 0.0, 1.0)
    assert len(buf) == 32
    f = tmp_path / "two.bin"
    f.write_bytes(buf)
    cloud = read_scan(f)
    assert cloud.count == 2
    assert cloud.points.dtype == np.float64
    np.testing.assert_array_equal(
        cloud.points, [[1.0, 0.0, 0.0, 0.5], [0.0, 1.0, 0.0, 1.0]]
    )


def test_read_scan_rejects_bad_length(tmp_path):
    f = tmp_path / "bad.bin"
    f.write_bytes(b"\x00" * 17)
    with pytest.raises(FormatError):
        read_scan(f)


def test_read_scan_rejects_non_finite_with_index(tmp_path):
    buf = struct.pack("<8f", 0.0, 0.0, 0.0, 0.0, float("nan"), 0.0, 0.0, 0.0)
    f = tmp_path / "nan.bin"
    f.write_bytes(buf)
    with pytest.raises(DataError, match="point 1"):
        read_scan(f)


def test_scan_roundtrip_quantizes_to_f32(tmp_path):
    rng = np.random.default_rng(7)
    pts = rng.normal(0, 30, (100, 4))
    cloud = PointCloud(pts)
    f = tmp_path / "rt.bin"
    write_scan(cloud, f)
    back = read_scan(f)
    np.testing.assert_array_equal(back.points, pts.astype(np.float32).astype(np.float64))
    assert f.stat().st_size == 100 * 16
    assert back.count * 16 == f.stat().st_size


def test_scan_roundtrip_exact_for_f32_representable(tmp_path):
    pts = np.array([[1.5, -2.25, 0.125, 0.5], [3.0, 4.0, -1.0, 1.0]])
    f = tmp_path / "exact.bin"
    write_scan(PointCloud(pts), f)
    np.testing.assert_array_equal(read_scan(f).points, pts)


def test_empty_cloud_roundtrip(tmp_path):
    f = tmp_path / "none.bin"
    write_scan(PointCloud(np.empty((0, 4))), f)
    assert f.stat().st_size == 0
    assert read_scan(f).count == 0


def test_labels_roundtrip_identity_schema(tmp_path):
    f = tmp_path / "l.label"
    write_labels(np.array([0, 1, 2]), f)
    out = read_labels(f, default_schema())
    np.testing.assert_array_equal(out, [0, 1, 2])


def test_read_labels_masks_instance_bits(tmp_path):
    schema = ClassSchema(
        base_names=("a", "b", "c"),
        novel_names=(),
        raw_to_contiguous={0: 0, 10: 2},
        background_id=0,
    )
    # instance id 1 in the high bits, semantic class 10 in the low bits
    word = (1 << 16) | 10
    f = tmp_path / "inst.label"
    f.write_bytes(np.array([word], dtype="<u4").tobytes())
    out = read_labels(f, schema)
    np.testing.assert_array_equal(out, [2])


def test_read_labels_raw_zero_maps_through(tmp_path):
    f = tmp_path / "zero.label"
    f.write_bytes(np.array([0], dtype="<u4").tobytes())
    assert read_labels(f, default_schema())[0] == 0


def test_unknown_raw_class_collapses_to_background(tmp_path):
    schema = default_schema()
    f = tmp_path / "unk.label"
    f.write_bytes(np.array([999, 3], dtype="<u4").tobytes())
    out = read_labels(f, schema)
    np.testing.assert_array_equal(out, [schema.background_id, 3])


def test_remap_is_total_over_random_raw_ids():
    schema = default_schema()
    rng = np.random.default_rng(0)
    raw = rng.integers(0, 2**16, 5000)
    out = schema.remap(raw)
    assert out.min() >= 0
    assert out.max() < schema.n_classes


def test_read_labels_without_schema_returns_raw(tmp_path):
    f = tmp_path / "raw.label"
    f.write_bytes(np.array([(7 << 16) | 42], dtype="<u4").tobytes())
    assert read_labels(f)[0] == 42


def test_write_labels_rejects_wide_ids(tmp_path):
    with pytest.raises(DataError):
        write_labels(np.array([0x10000]), tmp_path / "w.label")


def test_labeled_scan_length_mismatch():
    cloud = PointCloud(np.zeros((3, 4)))
    with pytest.raises(DataError):
        LabeledScan(cloud=cloud, labels=np.array([0, 1]))


def test_pointcloud_rejects_bad_shape_and_nan():
    with pytest.raises(DataError):
        PointCloud(np.zeros((2, 3)))
    bad = np.zeros((2, 4))
    bad[1, 2] = np.inf
    with pytest.raises(DataError, match="point 1"):
        PointCloud(bad)
