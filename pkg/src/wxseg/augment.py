"""Scan augmentation, polar data mixing, and pseudo-validation sets.

Pseudo-validation sets stand in for real validation data when only K
labeled adverse scans exist: the shots are augmented (axis flips,
rotation, size and intensity scaling, plus positional jitter restricted
to adverse-weather points) and recombined into new plausible sweeps by
mixing azimuthal sectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .geom import TWO_PI, sector_mask
from .pcio import LabeledScan, PointCloud
from .util import derive_seed

# number of augmented draws combined into each stage-one pseudo-val scan;
# drawn with replacement when fewer than MIX_DRAWS shots exist
MIX_DRAWS = 4


@dataclass
class AugmentationParams:
    flip_x: bool = True
    flip_y: bool = True
    rotation_range: tuple = (-np.pi / 4.0, np.pi / 4.0)
    scale_range: tuple = (0.9, 1.1)
    intensity_range: tuple = (0.9, 1.0)
    jitter_std: float = 0.3
    seed: int = 0

    def __post_init__(self):
        for name in ("rotation_range", "scale_range", "intensity_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise DataError(f"{name} is not well-ordered: ({lo}, {hi})")
            setattr(self, name, (float(lo), float(hi)))
        if self.jitter_std < 0:
            raise DataError("jitter_std must be >= 0")

    def to_dict(self) -> dict:
        return {
            "flip_x": bool(self.flip_x),
            "flip_y": bool(self.flip_y),
            "rotation_range": [float(v) for v in self.rotation_range],
            "scale_range": [float(v) for v in self.scale_range],
            "intensity_range": [float(v) for v in self.intensity_range],
            "jitter_std": float(self.jitter_std),
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentationParams":
        d = dict(d)
        for name in ("rotation_range", "scale_range", "intensity_range"):
            if name in d:
                d[name] = tuple(d[name])
        return cls(**d)


@dataclass
class PseudoValSet:
    scans: list
    provenance: str  # "stage-one" | "stage-two"

    @property
    def size(self) -> int:
        return len(self.scans)


def augment_scan(
    scan: LabeledScan,
    params: AugmentationParams,
    draw_seed: int,
    novel_ids=(),
) -> LabeledScan:
    """Apply flips, z-rotation, size scale, intensity scale, then Gaussian
    xyz jitter on points labeled with a novel id. Labels are untouched;
    deterministic for a given draw_seed."""
    rng = np.random.default_rng([params.seed, int(draw_seed)])
    pts = scan.cloud.points.copy()
    if params.flip_x and rng.random() < 0.5:
        pts[:, 0] = -pts[:, 0]
    if params.flip_y and rng.random() < 0.5:
        pts[:, 1] = -pts[:, 1]
    ang = rng.uniform(*params.rotation_range)
    c, s = np.cos(ang), np.sin(ang)
    x, y = pts[:, 0].copy(), pts[:, 1].copy()
    pts[:, 0] = c * x - s * y
    pts[:, 1] = s * x + c * y
    scale = rng.uniform(*params.scale_range)
    pts[:, 0:3] *= scale
    iscale = rng.uniform(*params.intensity_range)
    pts[:, 3] = np.clip(pts[:, 3] * iscale, 0.0, 1.0)
    novel_mask = np.isin(scan.labels, np.asarray(list(novel_ids), dtype=np.int64))
    n_novel = int(novel_mask.sum())
    if n_novel:
        pts[novel_mask, 0:3] += rng.normal(0.0, params.jitter_std, (n_novel, 3))
    return LabeledScan(cloud=PointCloud(pts), labels=scan.labels.copy())


def polar_mix(a: LabeledScan, b: LabeledScan, theta: float, start: float = 0.0) -> LabeledScan:
    """Take the sector [start, start+theta) from scan a and fill the rest
    of the circle with scan b. Points keep their labels and original
    order, a-points first."""
    if not 0.0 < theta < TWO_PI:
        raise DataError(f"theta must lie in the open interval (0, 2*pi), got {theta}")
    ma = sector_mask(a.cloud, start, theta)
    mb = sector_mask(b.cloud, start, theta)
    pts = np.concatenate([a.cloud.points[ma], b.cloud.points[~mb]], axis=0)
    labels = np.concatenate([a.labels[ma], b.labels[~mb]])
    return LabeledScan(cloud=PointCloud(pts), labels=labels)


def polar_mix_multi(scans, seed: int, boundaries=None) -> LabeledScan:
    """Partition the circle into len(scans) contiguous sectors at sorted
    uniform boundaries and take sector i from scan i. Explicit boundaries
    (already sorted, one per scan) override the draw."""
    if len(scans) < 2:
        raise DataError("polar_mix_multi needs at least 2 scans")
    n = len(scans)
    if boundaries is None:
        rng = np.random.default_rng(int(seed))
        boundaries = np.sort(rng.uniform(0.0, TWO_PI, n))
    else:
        boundaries = np.asarray(boundaries, dtype=np.float64)
        if boundaries.shape != (n,) or np.any(np.diff(boundaries) < 0):
            raise DataError("boundaries must be one sorted angle per scan")
    widths = np.diff(boundaries, append=boundaries[0] + TWO_PI)
    pts = []
    labels = []
    for i, scan in enumerate(scans):
        mask = sector_mask(scan.cloud, boundaries[i], widths[i])
        pts.append(scan.cloud.points[mask])
        labels.append(scan.labels[mask])
    return LabeledScan(
        cloud=PointCloud(np.concatenate(pts, axis=0)),
        labels=np.concatenate(labels),
    )


def build_pseudoval_stage1(
    shots, size: int, params: AugmentationParams, seed: int, novel_ids=()
) -> PseudoValSet:
    """Each scan mixes MIX_DRAWS independently augmented draws from the
    shots (with replacement when K < MIX_DRAWS, without otherwise)."""
    if not shots:
        raise DataError("shots must be non-empty")
    if size < 1:
        raise DataError("size must be >= 1")
    k = len(shots)
    out = []
    for j in range(size):
        rng = np.random.default_rng([int(seed), j])
        if k >= MIX_DRAWS:
            idxs = rng.choice(k, MIX_DRAWS, replace=False)
        else:
            idxs = rng.choice(k, MIX_DRAWS, replace=True)
        augmented = [
            augment_scan(shots[i], params, derive_seed(seed, j, slot), novel_ids)
            for slot, i in enumerate(idxs)
        ]
        out.append(polar_mix_multi(augmented, derive_seed(seed, j, 999)))
    return PseudoValSet(scans=out, provenance="stage-one")


def build_pseudoval_stage2(
    shots, source, size: int, params: AugmentationParams, seed: int, novel_ids=()
) -> PseudoValSet:
    """Each scan mixes one augmented shot with one uniformly drawn source
    scan, with the shot sector width drawn from Uniform(pi/2, 3*pi/2)."""
    if not shots:
        raise DataError("shots must be non-empty")
    if not source:
        raise DataError("source pool must be non-empty")
    if size < 1:
        raise DataError("size must be >= 1")
    out = []
    for j in range(size):
        rng = np.random.default_rng([int(seed), j])
        shot = shots[int(rng.integers(len(shots)))]
        src = source[int(rng.integers(len(source)))]
        theta = rng.uniform(np.pi / 2.0, 3.0 * np.pi / 2.0)
        start = rng.uniform(0.0, TWO_PI)
        aug = augment_scan(shot, params, derive_seed(seed, j, 0), novel_ids)
        out.append(polar_mix(aug, src, theta, start))
    return PseudoValSet(scans=out, provenance="stage-two")
