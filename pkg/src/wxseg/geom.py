"""Azimuthal sectoring and grid-hashed neighborhood statistics.

The feature matrix built here is the model input: per point
(x, y, z, intensity, range, neighbor count within a radius, mean distance
to the k nearest other points). The spatial hash grid is purely an
acceleration structure; its results are required to match an O(N^2)
brute-force computation bit-for-bit on 64-bit floats.
"""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from .pcio import PointCloud

TWO_PI = 2.0 * np.pi

FEATURE_DIM = 7
FEATURE_NAMES = (
    "x",
    "y",
    "z",
    "intensity",
    "range",
    "neighbor_count_r",
    "mean_knn_dist",
)


def azimuth(x, y):
    """Counterclockwise angle from the +x axis, normalized into [0, 2*pi).

    Total on arrays and scalars; the origin maps to 0 by convention.
    """
    a = np.arctan2(y, x)
    a = np.where(a < 0.0, a + TWO_PI, a)
    # tiny negative angles can round up to exactly 2*pi after the shift
    a = np.where(a >= TWO_PI, 0.0, a)
    if np.ndim(a) == 0:
        return float(a)
    return a


def sector_mask(cloud: PointCloud, start: float, width: float) -> np.ndarray:
    """Boolean mask of points whose azimuth lies in [start, start+width).

    The sector wraps modulo 2*pi; width 0 selects nothing and width 2*pi
    selects everything.
    """
    if not 0.0 <= width <= TWO_PI:
        raise ValueError(f"sector width must lie in [0, 2*pi], got {width}")
    if cloud.count == 0:
        return np.zeros(0, dtype=bool)
    az = azimuth(cloud.points[:, 0], cloud.points[:, 1])
    d = np.mod(az - start, TWO_PI)
    d = np.where(d >= TWO_PI, 0.0, d)  # same rounding guard as azimuth
    return d < width


@dataclass
class GridIndex:
    """Hash of integer cells floor(xyz / cell_size) to point index arrays."""

    cell_size: float
    cells: dict
    n_points: int


def build_grid_index(cloud: PointCloud, cell: float) -> GridIndex:
    if cell <= 0:
        raise ValueError(f"cell size must be positive, got {cell}")
    n = cloud.count
    if n == 0:
        return GridIndex(cell_size=float(cell), cells={}, n_points=0)
    keys = np.floor(cloud.xyz / cell).astype(np.int64)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    order = np.lexsort((np.arange(n), inverse))  # cell-major, original order within
    bounds = np.searchsorted(inverse[order], np.arange(len(uniq) + 1))
    cells = {}
    for ci in range(len(uniq)):
        cells[tuple(int(v) for v in uniq[ci])] = order[bounds[ci] : bounds[ci + 1]]
    return GridIndex(cell_size=float(cell), cells=cells, n_points=n)


def neighbor_features(
    cloud: PointCloud, index: GridIndex, radius: float, k: int
) -> np.ndarray:
    """Per-point feature matrix (N, 7); see FEATURE_NAMES for columns.

    neighbor_count_r counts other points within Euclidean distance
    <= radius. mean_knn_dist averages the distances to the k nearest
    other points (over however many exist if fewer than k); a point with
    no neighbors at all gets the sentinel 2*radius so later gradients
    never see NaN.
    """
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if index.n_points != cloud.count:
        raise ValueError("grid index was not built from this cloud")
    n = cloud.count
    feats = np.empty((n, FEATURE_DIM), dtype=np.float64)
    if n == 0:
        return feats
    xyz = cloud.xyz
    feats[:, 0:4] = cloud.points
    feats[:, 4] = np.sqrt(np.sum(xyz**2, axis=1))
    counts = np.zeros(n, dtype=np.float64)
    knn = np.full(n, 2.0 * radius, dtype=np.float64)
    if n > 1:
        kk = min(k, n - 1)
        cell = index.cell_size
        s0 = max(1, int(np.ceil(radius / cell)))
        keys_arr = np.array(list(index.cells.keys()), dtype=np.int64)
        members_list = list(index.cells.values())
        for ci, members in enumerate(members_list):
            _cell_stats(
                xyz, ci, members, keys_arr, members_list, radius, kk, s0, cell,
                counts, knn,
            )
    feats[:, 5] = counts
    feats[:, 6] = knn
    return feats


def _cell_stats(xyz, ci, members, keys_arr, members_list, radius, kk, s0, cell, counts, knn):
    """Fill counts and knn means for one cell's points.

    Occupied cells are ranked by Chebyshev distance from the home cell;
    the candidate set starts with the box that covers the radius ball and
    grows to the next occupied distance until the k-th neighbor distance
    is provably final (no ungathered cell can hold anything closer than
    s * cell_size once the box at Chebyshev distance s is complete)."""
    n = xyz.shape[0]
    cheb = np.abs(keys_arr - keys_arr[ci]).max(axis=1)
    order = np.argsort(cheb, kind="stable")
    sorted_cheb = cheb[order]
    m_end = int(np.searchsorted(sorted_cheb, s0, side="right"))
    cand = np.concatenate([members_list[oi] for oi in order[:m_end]])
    s = s0
    while True:
        diff = xyz[members][:, None, :] - xyz[cand][None, :, :]
        dist = np.sqrt(np.sum(diff**2, axis=2))
        selfm = cand[None, :] == members[:, None]
        if s == s0:
            # the s0 box covers the full Euclidean radius ball, so counts
            # are exact on the first pass
            counts[members] = np.sum((dist <= radius) & ~selfm, axis=1)
        complete = cand.size == n
        done = True
        for r in range(len(members)):
            od = np.sort(dist[r][~selfm[r]])
            if od.size < kk or (not complete and od[kk - 1] > s * cell):
                done = False
                break
            knn[members[r]] = od[:kk].mean()
        if done or complete:
            return
        # jump straight to the next occupied Chebyshev distance
        s = int(sorted_cheb[m_end])
        new_end = int(np.searchsorted(sorted_cheb, s, side="right"))
        cand = np.concatenate(
            [cand] + [members_list[oi] for oi in order[m_end:new_end]]
        )
        m_end = new_end
