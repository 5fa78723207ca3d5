"""Bit-exact I/O for KITTI-style point-cloud and label binaries.

Scan files hold consecutive records of four little-endian IEEE-754
binary32 values (x, y, z, intensity). Label files hold one little-endian
uint32 per point; the semantic class is the low 16 bits, the high 16 bits
carry an instance id and are discarded here.

Arrays are held as 64-bit floats internally so downstream gradient checks
are not limited by single precision; quantization to binary32 happens
only when a scan is written.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError

RECORD_BYTES = 16  # 4 x little-endian float32 per point


@dataclass
class PointCloud:
    """One LiDAR sweep: an (N, 4) float64 array, columns x, y, z, intensity."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise DataError(f"point array must have shape (N, 4), got {pts.shape}")
        if pts.size and not np.all(np.isfinite(pts)):
            bad = int(np.nonzero(~np.isfinite(pts).all(axis=1))[0][0])
            raise DataError(f"non-finite coordinate or intensity at point {bad}")
        self.points = pts

    @property
    def count(self) -> int:
        return self.points.shape[0]

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self.points[:, 3]


@dataclass
class LabeledScan:
    """A point cloud paired with one contiguous class id per point."""

    cloud: PointCloud
    labels: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 1 or not np.issubdtype(lab.dtype, np.integer):
            raise DataError("labels must be a 1-D integer array")
        if lab.shape[0] != self.cloud.count:
            raise DataError(
                f"label count {lab.shape[0]} does not match point count {self.cloud.count}"
            )
        if lab.size and lab.min() < 0:
            raise DataError("labels must be non-negative")
        self.labels = lab.astype(np.int64)

    @property
    def count(self) -> int:
        return self.cloud.count


def read_scan(path) -> PointCloud:
    """Read a binary scan file; empty files yield an empty cloud."""
    raw = Path(path).read_bytes()
    if len(raw) % RECORD_BYTES != 0:
        raise FormatError(
            f"{path}: file size {len(raw)} is not a multiple of {RECORD_BYTES} bytes"
        )
    pts = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(-1, 4)
    if pts.size and not np.all(np.isfinite(pts)):
        bad = int(np.nonzero(~np.isfinite(pts).all(axis=1))[0][0])
        raise DataError(f"{path}: non-finite value at point {bad}")
    return PointCloud(pts)


def read_labels(path, schema=None) -> np.ndarray:
    """Read a label file and remap raw semantic ids through the schema.

    The low 16 bits of each word are the raw semantic class; raw ids
    missing from the schema collapse to its background id. With
    schema=None the raw semantic ids are returned unmapped.
    """
    raw = Path(path).read_bytes()
    if len(raw) % 4 != 0:
        raise FormatError(f"{path}: file size {len(raw)} is not a multiple of 4 bytes")
    words = np.frombuffer(raw, dtype="<u4")
    sem = (words & 0xFFFF).astype(np.int64)
    if schema is None:
        return sem
    return schema.remap(sem)


def write_scan(cloud: PointCloud, path) -> None:
    Path(path).write_bytes(cloud.points.astype("<f4").tobytes())


def write_labels(labels: np.ndarray, path) -> None:
    lab = np.asarray(labels)
    if lab.ndim != 1 or not np.issubdtype(lab.dtype, np.integer):
        raise DataError("labels must be a 1-D integer array")
    if lab.size and (int(lab.min()) < 0 or int(lab.max()) > 0xFFFF):
        raise DataError("label ids must fit in the low 16 bits")
    Path(path).write_bytes(lab.astype("<u4").tobytes())
