"""Probabilistic occupancy grid with log-odds ray updates."""

import hashlib
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from nbv_planner.errors import InvalidArgumentError
from nbv_planner.models import GridConfig
from nbv_planner.scene import PointCloud

Index = tuple[int, int, int]


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


class VoxelState(str, Enum):
    FREE = "free"
    UNKNOWN = "unknown"
    OCCUPIED = "occupied"


@dataclass
class OccupancyGrid:
    """Uniform voxel grid; `logodds` is indexed [x, y, z] and starts at 0 (p = 0.5)."""

    dims: Index
    origin: np.ndarray
    resolution: float
    logodds: np.ndarray
    params: GridConfig

    @classmethod
    def fresh(
        cls,
        dims: Sequence[int],
        origin: Sequence[float],
        resolution: float,
        params: Optional[GridConfig] = None,
    ) -> "OccupancyGrid":
        if resolution <= 0:
            raise InvalidArgumentError(f"grid resolution must be positive, got {resolution}")
        nx, ny, nz = (int(d) for d in dims)
        if min(nx, ny, nz) < 1:
            raise InvalidArgumentError(f"grid dims must be positive, got {tuple(dims)}")
        return cls(
            dims=(nx, ny, nz),
            origin=np.asarray(origin, dtype=np.float64),
            resolution=float(resolution),
            logodds=np.zeros((nx, ny, nz)),
            params=params or GridConfig(),
        )

    @property
    def l_min(self) -> float:
        return logit(self.params.p_min)

    @property
    def l_max(self) -> float:
        return logit(self.params.p_max)

    @property
    def upper(self) -> np.ndarray:
        return self.origin + self.resolution * np.array(self.dims)

    def copy(self) -> "OccupancyGrid":
        return OccupancyGrid(
            self.dims, self.origin.copy(), self.resolution, self.logodds.copy(), self.params
        )

    def index_of(self, point: Sequence[float]) -> Optional[Index]:
        """Voxel containing `point`, or None outside the grid."""
        g = np.floor((np.asarray(point, dtype=np.float64) - self.origin) / self.resolution)
        if np.any(g < 0) or np.any(g >= np.array(self.dims)):
            return None
        return int(g[0]), int(g[1]), int(g[2])

    def contains_all(self, cloud: PointCloud) -> bool:
        g = np.floor((cloud.points - self.origin) / self.resolution)
        return bool(np.all((g >= 0) & (g < np.array(self.dims))))

    def snapshot_hash(self) -> str:
        """Content digest of the log-odds state, used in reconstruction logs."""
        return hashlib.sha256(np.ascontiguousarray(self.logodds).tobytes()).hexdigest()[:16]


def grid_for_object(half_extent: float, params: Optional[GridConfig] = None) -> OccupancyGrid:
    """Cube centered at the origin that contains an object of the given half-extent."""
    params = params or GridConfig()
    if half_extent <= 0:
        raise InvalidArgumentError(f"object half-extent must be positive, got {half_extent}")
    edge = 2.0 * half_extent * params.margin
    n = params.edge
    return OccupancyGrid.fresh((n, n, n), [-edge / 2.0] * 3, edge / n, params)


def _clip_to_box(g0: np.ndarray, d: np.ndarray, dims: np.ndarray) -> Optional[tuple[float, float]]:
    """Parameter range [t0, t1] within [0, 1] where g0 + t*d lies inside [0, dims]."""
    t0, t1 = 0.0, 1.0
    for axis in range(3):
        if d[axis] == 0.0:
            if g0[axis] < 0.0 or g0[axis] > dims[axis]:
                return None
            continue
        a = (0.0 - g0[axis]) / d[axis]
        b = (dims[axis] - g0[axis]) / d[axis]
        if a > b:
            a, b = b, a
        t0 = max(t0, a)
        t1 = min(t1, b)
        if t0 > t1:
            return None
    return t0, t1


def traverse(
    grid: OccupancyGrid, start: np.ndarray, end: np.ndarray
) -> tuple[list[Index], Optional[Index]]:
    """3D DDA from `start` to `end` clipped to the grid.

    Returns (voxels crossed before the endpoint, endpoint voxel or None when the
    endpoint lies outside the grid).
    """
    dims = np.array(grid.dims)
    g0 = (np.asarray(start, dtype=np.float64) - grid.origin) / grid.resolution
    g1 = (np.asarray(end, dtype=np.float64) - grid.origin) / grid.resolution
    end_voxel = grid.index_of(end)
    d = g1 - g0

    span = _clip_to_box(g0, d, dims)
    if span is None:
        return [], end_voxel
    t0, t1 = span

    entry = g0 + t0 * d
    voxel = [int(min(max(math.floor(entry[k]), 0), dims[k] - 1)) for k in range(3)]
    step = [0, 0, 0]
    t_max = [math.inf] * 3
    t_delta = [math.inf] * 3
    for k in range(3):
        if d[k] > 0:
            step[k] = 1
            t_max[k] = (voxel[k] + 1 - g0[k]) / d[k]
            t_delta[k] = 1.0 / d[k]
        elif d[k] < 0:
            step[k] = -1
            t_max[k] = (voxel[k] - g0[k]) / d[k]
            t_delta[k] = -1.0 / d[k]

    crossed: list[Index] = []
    while True:
        current = (voxel[0], voxel[1], voxel[2])
        if current == end_voxel:
            break
        crossed.append(current)
        axis = min(range(3), key=lambda k: t_max[k])
        if t_max[axis] > t1:
            break
        voxel[axis] += step[axis]
        if voxel[axis] < 0 or voxel[axis] >= dims[axis]:
            break
        t_max[axis] += t_delta[axis]
    return crossed, end_voxel


def update_grid(
    grid: OccupancyGrid, perception: PointCloud, sensor_origin: Sequence[float]
) -> OccupancyGrid:
    """Integrate one perception in place and return the grid.

    Each voxel receives at most one hit and one miss per perception; a voxel
    that is both hit and crossed only receives the hit.
    """
    if perception.is_empty:
        return grid
    origin = np.asarray(sensor_origin, dtype=np.float64)
    hit = np.zeros(grid.dims, dtype=bool)
    miss = np.zeros(grid.dims, dtype=bool)
    for point in perception.points:
        crossed, end_voxel = traverse(grid, origin, point)
        for voxel in crossed:
            miss[voxel] = True
        if end_voxel is not None:
            hit[end_voxel] = True
    miss &= ~hit

    grid.logodds[hit] += grid.params.log_odds_hit
    grid.logodds[miss] += grid.params.log_odds_miss
    np.clip(grid.logodds, grid.l_min, grid.l_max, out=grid.logodds)
    return grid


def to_tensor(grid: OccupancyGrid) -> np.ndarray:
    """Occupancy probabilities, shape dims, x-major."""
    return 1.0 / (1.0 + np.exp(-grid.logodds))


def from_tensor(
    probabilities: np.ndarray,
    origin: Sequence[float] = (0.0, 0.0, 0.0),
    resolution: float = 1.0,
    params: Optional[GridConfig] = None,
) -> OccupancyGrid:
    probs = np.asarray(probabilities, dtype=np.float64)
    if probs.ndim != 3:
        raise InvalidArgumentError(f"expected a 3D probability array, got shape {probs.shape}")
    if np.any(probs <= 0.0) or np.any(probs >= 1.0):
        raise InvalidArgumentError("probabilities must lie strictly between 0 and 1")
    grid = OccupancyGrid.fresh(probs.shape, origin, resolution, params)
    grid.logodds = np.log(probs / (1.0 - probs))
    return grid


def classify(grid: OccupancyGrid, index: Sequence[int]) -> VoxelState:
    if len(index) != 3 or any(not 0 <= int(i) < n for i, n in zip(index, grid.dims)):
        raise InvalidArgumentError(f"voxel index {tuple(index)} outside grid {grid.dims}")
    p = 1.0 / (1.0 + math.exp(-grid.logodds[tuple(int(i) for i in index)]))
    eps = grid.params.state_epsilon
    if p > 0.5 + eps:
        return VoxelState.OCCUPIED
    if p < 0.5 - eps:
        return VoxelState.FREE
    return VoxelState.UNKNOWN


def state_counts(grid: OccupancyGrid) -> dict[VoxelState, int]:
    probs = to_tensor(grid)
    eps = grid.params.state_epsilon
    occupied = int(np.count_nonzero(probs > 0.5 + eps))
    free = int(np.count_nonzero(probs < 0.5 - eps))
    return {
        VoxelState.FREE: free,
        VoxelState.UNKNOWN: probs.size - free - occupied,
        VoxelState.OCCUPIED: occupied,
    }
