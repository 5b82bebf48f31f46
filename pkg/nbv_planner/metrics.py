"""Point-cloud comparison: spatial index, coverage, overlap, downsampling and features."""

from itertools import chain
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from nbv_planner.errors import InvalidArgumentError
from nbv_planner.scene import PointCloud

NEIGHBORHOOD_RTOL = 1e-9


class SpatialIndex:
    """Immutable kd-tree over a cloud. Radius queries include points at distance exactly r."""

    def __init__(self, cloud: PointCloud):
        self.cloud = cloud
        self.tree: Optional[cKDTree] = cKDTree(cloud.points) if len(cloud) else None

    def __len__(self) -> int:
        return len(self.cloud)

    def radius_query(self, point: np.ndarray, r: float) -> np.ndarray:
        """Sorted indices of indexed points within distance r of `point`."""
        if self.tree is None:
            return np.zeros(0, dtype=np.intp)
        found = self.tree.query_ball_point(np.asarray(point, dtype=np.float64), r)
        return np.array(sorted(found), dtype=np.intp)

    def count_within(self, points: np.ndarray, r: float) -> np.ndarray:
        """Number of indexed points within r of each query point."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if self.tree is None or len(points) == 0:
            return np.zeros(len(points), dtype=np.intp)
        return np.asarray(self.tree.query_ball_point(points, r, return_length=True), dtype=np.intp)

    def covered_by(self, points: np.ndarray, r: float) -> np.ndarray:
        """Mask over indexed points: True where some query point lies within r."""
        mask = np.zeros(len(self), dtype=bool)
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if self.tree is None or len(points) == 0:
            return mask
        hits = self.tree.query_ball_point(points, r)
        idx = np.fromiter(chain.from_iterable(hits), dtype=np.intp)
        mask[idx] = True
        return mask


def coverage_mask(a: PointCloud, w_obj: PointCloud, gap: float) -> np.ndarray:
    """Per-point flags of `w_obj` that have a neighbor in `a` within gap."""
    if w_obj.is_empty:
        raise InvalidArgumentError("coverage needs a nonempty ground-truth cloud")
    return w_obj.index.covered_by(a.points, gap)


def coverage(a: PointCloud, w_obj: PointCloud, gap: float) -> float:
    """Fraction of `w_obj` points with at least one neighbor in `a` within gap."""
    mask = coverage_mask(a, w_obj, gap)
    return float(mask.mean())


def overlap_mask(z: PointCloud, p_acu: PointCloud, gap: float) -> np.ndarray:
    if z.is_empty:
        raise InvalidArgumentError("overlap needs a nonempty perception")
    return p_acu.index.count_within(z.points, gap) > 0


def overlap(z: PointCloud, p_acu: PointCloud, gap: float) -> float:
    """Fraction of the new perception's points matched in the accumulated cloud."""
    return float(overlap_mask(z, p_acu, gap).mean())


def overlap_region(z: PointCloud, p_acu: PointCloud, gap: float) -> PointCloud:
    """The points of `z` that have a neighbor in `p_acu` within gap."""
    return z.subset(overlap_mask(z, p_acu, gap))


def surface_variation(
    region: PointCloud, neighborhood: float
) -> tuple[np.ndarray, np.ndarray, sparse.csr_matrix]:
    """Per-point sigma = l0 / (l0 + l1 + l2) of the neighborhood covariance.

    Returns (sigma, neighbor counts including the point itself, adjacency).
    """
    n = len(region)
    pts = region.points - region.points.mean(axis=0)
    # Lattice samples put many pairs at exactly `neighborhood`; keep them under rotation
    reach = neighborhood * (1.0 + NEIGHBORHOOD_RTOL)
    pairs = region.index.tree.query_pairs(reach, output_type="ndarray")
    diag = np.arange(n)
    rows = np.concatenate([pairs[:, 0], pairs[:, 1], diag])
    cols = np.concatenate([pairs[:, 1], pairs[:, 0], diag])
    adj = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))

    counts = np.asarray(adj.sum(axis=1)).ravel()
    mean = (adj @ pts) / counts[:, None]
    outer = (pts[:, :, None] * pts[:, None, :]).reshape(n, 9)
    second = (adj @ outer).reshape(n, 3, 3) / counts[:, None, None]
    cov = second - mean[:, :, None] * mean[:, None, :]

    eig = np.linalg.eigvalsh(cov)
    smallest = np.clip(eig[:, 0], 0.0, None)
    total = np.clip(eig, 0.0, None).sum(axis=1)
    sigma = np.divide(smallest, total, out=np.zeros(n), where=total > 0)
    return sigma, counts, adj


def detect_features(region: PointCloud, neighborhood: float, curvature_tau: float) -> np.ndarray:
    """Surface-variation keypoints after non-maximum suppression, shape (k, 3)."""
    if neighborhood <= 0:
        raise InvalidArgumentError(f"feature neighborhood must be positive, got {neighborhood}")
    if len(region) < 4:
        return np.zeros((0, 3))

    sigma, counts, adj = surface_variation(region, neighborhood)
    candidate = (counts >= 4) & (sigma > curvature_tau)

    # Strongest first; ties go to the lower index
    order = np.lexsort((np.arange(len(region)), -sigma))
    suppressed = np.zeros(len(region), dtype=bool)
    kept = []
    for i in order:
        if not candidate[i] or suppressed[i]:
            continue
        kept.append(i)
        suppressed[adj.indices[adj.indptr[i] : adj.indptr[i + 1]]] = True
    return region.points[np.array(kept, dtype=np.intp)].reshape(-1, 3)


def count_features(region: PointCloud, neighborhood: float, curvature_tau: float) -> int:
    return len(detect_features(region, neighborhood, curvature_tau))


def downsize_filter(cloud: PointCloud, leaf: float) -> PointCloud:
    """One centroid per occupied cubic cell of edge `leaf`, ordered by cell index."""
    if leaf <= 0:
        raise InvalidArgumentError(f"leaf size must be positive, got {leaf}")
    if cloud.is_empty:
        return cloud
    cells = np.floor(cloud.points / leaf).astype(np.int64)
    _, inverse, counts = np.unique(cells, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    sums = np.stack(
        [np.bincount(inverse, weights=cloud.points[:, k], minlength=len(counts)) for k in range(3)],
        axis=1,
    )
    return PointCloud(sums / counts[:, None])
