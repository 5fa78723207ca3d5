"""Procedural desk-scale scenes: good-weather and adverse-weather sweeps.

Scenes are built from a planar ground annulus, box-shaped vehicles,
vertical wall segments, and (in adverse weather) diffuse low-intensity
Gaussian noise blobs hanging around the vehicles. The blobs are
deliberately separable from the solid classes through intensity and
local-density statistics so directional end-to-end tests are meaningful.

Everything is a pure function of seeds; repeated calls are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import DataError
from .pcio import LabeledScan, PointCloud, read_labels, read_scan, write_labels, write_scan
from .util import derive_seed

# sub-stream tags for per-scan seed derivation
POOL_SOURCE = 0
POOL_TARGET = 1
POOL_SOURCE_TEST = 2
POOL_TARGET_TEST = 3


@dataclass
class ClassSchema:
    """Disjoint base and novel classes with a raw-to-contiguous id map.

    Contiguous ids are positional: base classes take 0..n_base-1 in
    order, novel classes follow. Raw ids absent from the map collapse to
    background_id when label files are read.
    """

    base_names: tuple
    novel_names: tuple
    raw_to_contiguous: dict
    background_id: int = 0

    def __post_init__(self):
        self.base_names = tuple(self.base_names)
        self.novel_names = tuple(self.novel_names)
        if set(self.base_names) & set(self.novel_names):
            raise DataError("base and novel class names must be disjoint")
        n = self.n_classes
        for raw, cid in self.raw_to_contiguous.items():
            if not 0 <= cid < n:
                raise DataError(f"raw id {raw} maps outside [0, {n})")
        if not 0 <= self.background_id < n:
            raise DataError("background id outside the contiguous range")
        max_raw = max(self.raw_to_contiguous, default=0)
        table = np.full(max_raw + 1, self.background_id, dtype=np.int64)
        for raw, cid in self.raw_to_contiguous.items():
            table[raw] = cid
        self._table = table

    @property
    def n_base(self) -> int:
        return len(self.base_names)

    @property
    def n_novel(self) -> int:
        return len(self.novel_names)

    @property
    def n_classes(self) -> int:
        return self.n_base + self.n_novel

    @property
    def base_ids(self) -> np.ndarray:
        return np.arange(self.n_base)

    @property
    def novel_ids(self) -> np.ndarray:
        return np.arange(self.n_base, self.n_classes)

    @property
    def class_names(self) -> tuple:
        return self.base_names + self.novel_names

    def remap(self, raw: np.ndarray) -> np.ndarray:
        raw = np.asarray(raw, dtype=np.int64)
        clipped = np.where((raw < 0) | (raw >= len(self._table)), 0, raw)
        out = self._table[clipped]
        out = np.where((raw < 0) | (raw >= len(self._table)), self.background_id, out)
        return out

    def to_dict(self) -> dict:
        return {
            "base_classes": list(self.base_names),
            "novel_classes": list(self.novel_names),
            "raw_to_contiguous": {int(k): int(v) for k, v in self.raw_to_contiguous.items()},
            "background_id": int(self.background_id),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClassSchema":
        return cls(
            base_names=tuple(d["base_classes"]),
            novel_names=tuple(d["novel_classes"]),
            raw_to_contiguous={int(k): int(v) for k, v in d["raw_to_contiguous"].items()},
            background_id=int(d.get("background_id", 0)),
        )


def default_schema() -> ClassSchema:
    return ClassSchema(
        base_names=("ground", "vehicle", "structure"),
        novel_names=("weather_noise",),
        raw_to_contiguous={0: 0, 1: 1, 2: 2, 3: 3},
        background_id=0,
    )


@dataclass
class SceneGenParams:
    seed: int = 0
    points_per_scan: int = 512
    ground_fraction: float = 0.50
    vehicle_fraction: float = 0.20
    structure_fraction: float = 0.15
    novel_fraction: float = 0.0
    noise_cluster_count: int = 8
    noise_sigma: float = 1.6
    sensor_range: float = 22.0

    def __post_init__(self):
        fracs = (
            self.ground_fraction,
            self.vehicle_fraction,
            self.structure_fraction,
            self.novel_fraction,
        )
        if any(f < 0 or f > 1 for f in fracs):
            raise DataError("class fractions must lie in [0, 1]")
        if sum(fracs) > 1.0 + 1e-12:
            raise DataError("class fractions must sum to at most 1")
        if self.points_per_scan < 1:
            raise DataError("points_per_scan must be >= 1")
        if self.noise_cluster_count < 1:
            raise DataError("noise_cluster_count must be >= 1")
        if self.noise_sigma < 0 or self.sensor_range <= 0:
            raise DataError("noise_sigma must be >= 0 and sensor_range > 0")

    def to_dict(self) -> dict:
        return {
            "seed": int(self.seed),
            "points_per_scan": int(self.points_per_scan),
            "ground_fraction": float(self.ground_fraction),
            "vehicle_fraction": float(self.vehicle_fraction),
            "structure_fraction": float(self.structure_fraction),
            "novel_fraction": float(self.novel_fraction),
            "noise_cluster_count": int(self.noise_cluster_count),
            "noise_sigma": float(self.noise_sigma),
            "sensor_range": float(self.sensor_range),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneGenParams":
        return cls(**d)


def default_good_params(seed: int = 0, points: int = 512) -> SceneGenParams:
    return SceneGenParams(seed=seed, points_per_scan=points)


def default_adverse_params(seed: int = 0, points: int = 512) -> SceneGenParams:
    # shorter range and wetter mix: attenuation shrinks the usable radius
    # and a quarter of the returns are airborne noise
    return SceneGenParams(
        seed=seed,
        points_per_scan=points,
        ground_fraction=0.40,
        vehicle_fraction=0.20,
        structure_fraction=0.12,
        novel_fraction=0.25,
        noise_cluster_count=8,
        noise_sigma=1.6,
        sensor_range=14.0,
    )


# contiguous ids used by the generator, matching default_schema()
GROUND, VEHICLE, STRUCTURE, NOISE = 0, 1, 2, 3


def _annulus_xy(rng, n, r_min, r_max):
    r = np.sqrt(rng.uniform(r_min**2, r_max**2, n))
    th = rng.uniform(0.0, 2.0 * np.pi, n)
    return r * np.cos(th), r * np.sin(th)


def gen_scene(params: SceneGenParams, scan_seed: int) -> LabeledScan:
    """Generate one labeled sweep, bit-identical for a (params, seed) pair."""
    rng = np.random.default_rng([params.seed, int(scan_seed)])
    n = params.points_per_scan
    n_novel = int(round(params.novel_fraction * n))
    n_vehicle = int(round(params.vehicle_fraction * n))
    n_structure = int(round(params.structure_fraction * n))
    n_ground = n - n_novel - n_vehicle - n_structure
    if n_ground < 0:
        raise DataError("rounded class counts exceed points_per_scan")

    r_max = params.sensor_range

    # vehicle boxes are drawn first so noise blobs can cluster around them
    n_boxes = int(rng.integers(3, 7))
    box_cx, box_cy = _annulus_xy(rng, n_boxes, 4.0, 0.8 * r_max)
    box_yaw = rng.uniform(0.0, 2.0 * np.pi, n_boxes)

    n_walls = int(rng.integers(2, 5))
    wall_cx, wall_cy = _annulus_xy(rng, n_walls, 0.55 * r_max, 0.95 * r_max)
    wall_dir = rng.uniform(0.0, 2.0 * np.pi, n_walls)
    wall_len = rng.uniform(8.0, 18.0, n_walls)
    wall_h = rng.uniform(3.0, 6.0, n_walls)

    parts = []
    labels = []

    gx, gy = _annulus_xy(rng, n_ground, 2.0, r_max)
    gz = rng.normal(0.0, 0.03, n_ground)
    gi = rng.uniform(0.30, 0.55, n_ground)
    parts.append(np.column_stack([gx, gy, gz, gi]))
    labels.append(np.full(n_ground, GROUND, dtype=np.int64))

    which = np.arange(n_vehicle) % n_boxes
    u = rng.uniform(-0.5, 0.5, (n_vehicle, 2)) * np.array([4.2, 1.9])
    c, s = np.cos(box_yaw[which]), np.sin(box_yaw[which])
    vx = box_cx[which] + u[:, 0] * c - u[:, 1] * s
    vy = box_cy[which] + u[:, 0] * s + u[:, 1] * c
    vz = rng.uniform(0.05, 1.65, n_vehicle)
    vi = rng.uniform(0.55, 0.95, n_vehicle)
    parts.append(np.column_stack([vx, vy, vz, vi]))
    labels.append(np.full(n_vehicle, VEHICLE, dtype=np.int64))

    wwhich = np.arange(n_structure) % n_walls
    along = rng.uniform(-0.5, 0.5, n_structure) * wall_len[wwhich]
    thick = rng.normal(0.0, 0.05, n_structure)
    wc, ws = np.cos(wall_dir[wwhich]), np.sin(wall_dir[wwhich])
    sx = wall_cx[wwhich] + along * wc - thick * ws
    sy = wall_cy[wwhich] + along * ws + thick * wc
    sz = rng.uniform(0.0, 1.0, n_structure) * wall_h[wwhich]
    si = rng.uniform(0.40, 0.80, n_structure)
    parts.append(np.column_stack([sx, sy, sz, si]))
    labels.append(np.full(n_structure, STRUCTURE, dtype=np.int64))

    if n_novel > 0:
        n_blobs = params.noise_cluster_count
        off = rng.normal(0.0, 2.5, (n_blobs, 2))
        anchor = rng.integers(0, n_boxes, n_blobs)
        bx = box_cx[anchor] + off[:, 0]
        by = box_cy[anchor] + off[:, 1]
        bz = rng.uniform(0.3, 2.2, n_blobs)
        bwhich = np.arange(n_novel) % n_blobs
        jit = rng.normal(0.0, params.noise_sigma, (n_novel, 3))
        nx = bx[bwhich] + jit[:, 0]
        ny = by[bwhich] + jit[:, 1]
        nz = bz[bwhich] + jit[:, 2]
        ni = rng.uniform(0.01, 0.15, n_novel)
        parts.append(np.column_stack([nx, ny, nz, ni]))
        labels.append(np.full(n_novel, NOISE, dtype=np.int64))

    pts = np.concatenate(parts, axis=0)
    lab = np.concatenate(labels)
    return LabeledScan(cloud=PointCloud(pts), labels=lab)


@dataclass
class DatasetSplit:
    """The three training pools: good-weather labeled source scans,
    K labeled adverse shots, and unlabeled adverse clouds."""

    source: list
    target_labeled: list
    target_unlabeled: list
    k: int
    schema: ClassSchema = field(default_factory=default_schema)

    def __post_init__(self):
        if len(self.target_labeled) != self.k:
            raise DataError(
                f"expected {self.k} labeled target scans, got {len(self.target_labeled)}"
            )
        novel = set(int(i) for i in self.schema.novel_ids)
        for i, scan in enumerate(self.source):
            if novel & set(np.unique(scan.labels).tolist()):
                raise DataError(f"source scan {i} contains novel-class labels")


def gen_split(
    params_good: SceneGenParams,
    params_adverse: SceneGenParams,
    n_source: int,
    n_target_unlabeled: int,
    k: int,
    seed: int,
    schema: ClassSchema | None = None,
) -> DatasetSplit:
    """Build a seeded DatasetSplit; every shot holds >= 1 novel point."""
    if k < 1:
        raise DataError("k must be >= 1")
    if n_source < 0 or n_target_unlabeled < 0:
        raise DataError("pool sizes must be >= 0")
    if params_good.novel_fraction != 0.0:
        raise DataError("source params must have novel_fraction == 0")
    schema = schema or default_schema()
    novel = set(int(i) for i in schema.novel_ids)

    source = [
        gen_scene(params_good, derive_seed(seed, POOL_SOURCE, i)) for i in range(n_source)
    ]

    pool = [
        gen_scene(params_adverse, derive_seed(seed, POOL_TARGET, j))
        for j in range(k + n_target_unlabeled)
    ]
    has_novel = [bool(novel & set(np.unique(s.labels).tolist())) for s in pool]
    shot_idx = [j for j, h in enumerate(has_novel) if h][:k]
    if len(shot_idx) < k:
        raise DataError(
            f"target pool holds only {sum(has_novel)} scans with novel points; need k={k}"
        )
    shots = [pool[j] for j in shot_idx]
    rest = [pool[j] for j in range(len(pool)) if j not in set(shot_idx)]
    unlabeled = [s.cloud for s in rest]
    return DatasetSplit(
        source=source,
        target_labeled=shots,
        target_unlabeled=unlabeled,
        k=k,
        schema=schema,
    )


def write_split(split: DatasetSplit, out_dir) -> Path:
    """Write the split in the wire format:
    {split}/{velodyne|labels}/{index:06}.{bin|label} plus schema.yaml and
    dataset.yaml. Returns the dataset manifest path."""
    out = Path(out_dir)
    layouts = [
        ("source", split.source, True),
        ("target_labeled", split.target_labeled, True),
        ("target_unlabeled", split.target_unlabeled, False),
    ]
    for name, scans, labeled in layouts:
        vdir = out / name / "velodyne"
        vdir.mkdir(parents=True, exist_ok=True)
        ldir = out / name / "labels"
        if labeled:
            ldir.mkdir(parents=True, exist_ok=True)
        for i, item in enumerate(scans):
            cloud = item.cloud if labeled else item
            write_scan(cloud, vdir / f"{i:06}.bin")
            if labeled:
                write_labels(item.labels, ldir / f"{i:06}.label")
    (out / "schema.yaml").write_text(
        yaml.safe_dump(split.schema.to_dict(), sort_keys=True)
    )
    manifest = {
        "k": int(split.k),
        "n_source": len(split.source),
        "n_target_unlabeled": len(split.target_unlabeled),
        "schema_file": "schema.yaml",
    }
    mpath = out / "dataset.yaml"
    mpath.write_text(yaml.safe_dump(manifest, sort_keys=True))
    return mpath


def _read_dir(dirpath: Path, schema: ClassSchema | None):
    vdir = dirpath / "velodyne"
    files = sorted(vdir.glob("*.bin"))
    out = []
    for f in files:
        cloud = read_scan(f)
        if schema is None:
            out.append(cloud)
        else:
            labels = read_labels(dirpath / "labels" / (f.stem + ".label"), schema)
            out.append(LabeledScan(cloud=cloud, labels=labels))
    return out


def load_split(data_dir) -> DatasetSplit:
    root = Path(data_dir)
    manifest = yaml.safe_load((root / "dataset.yaml").read_text())
    schema = ClassSchema.from_dict(
        yaml.safe_load((root / manifest["schema_file"]).read_text())
    )
    return DatasetSplit(
        source=_read_dir(root / "source", schema),
        target_labeled=_read_dir(root / "target_labeled", schema),
        target_unlabeled=_read_dir(root / "target_unlabeled", None),
        k=int(manifest["k"]),
        schema=schema,
    )
