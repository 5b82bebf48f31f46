"""Procedural objects, view spheres and simulated depth sensing.

Frames: the object sits at the origin of the global frame. A view's
orientation is the intrinsic x-y-z rotation (alpha, then beta, then gamma);
the camera looks along its own +z axis, +x to the right of the image and +y
down the image rows.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import TYPE_CHECKING, Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.spatial.transform import Rotation

from nbv_planner.errors import InvalidArgumentError

if TYPE_CHECKING:
    from nbv_planner.metrics import SpatialIndex

NO_HIT = np.inf
GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))
# Rays x triangles evaluated per chunk during rendering
_RENDER_CHUNK = 1_000_000

ObjectKind = Literal["sphere", "box", "lshape", "torus", "capsule", "composite"]
OBJECT_KINDS: tuple[str, ...] = ("sphere", "box", "lshape", "torus", "capsule", "composite")


def look_at(position: Sequence[float]) -> tuple[float, float, float]:
    """Return (alpha, beta, gamma) pointing the camera +z axis at the origin."""
    p = np.asarray(position, dtype=np.float64)
    norm = float(np.linalg.norm(p))
    if norm == 0.0:
        raise InvalidArgumentError("a view cannot sit at the origin")
    d = -p / norm
    beta = math.asin(max(-1.0, min(1.0, float(d[0]))))
    alpha = math.atan2(-float(d[1]), float(d[2]))
    return alpha, beta, 0.0


class View(BaseModel):
    """A sensor pose; its id doubles as a class label inside a class set."""

    model_config = ConfigDict(frozen=True)

    x: float
    y: float
    z: float
    alpha: float
    beta: float
    gamma: float
    id: int = Field(..., ge=0)

    @classmethod
    def looking_at_origin(cls, position: Sequence[float], view_id: int) -> "View":
        alpha, beta, gamma = look_at(position)
        x, y, z = (float(c) for c in position)
        return cls(x=x, y=y, z=z, alpha=alpha, beta=beta, gamma=gamma, id=view_id)

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    @property
    def rotation(self) -> np.ndarray:
        """Camera-to-global rotation matrix."""
        return Rotation.from_euler("XYZ", [self.alpha, self.beta, self.gamma]).as_matrix()

    @property
    def direction(self) -> np.ndarray:
        """Unit vector from the origin towards the sensor."""
        p = self.position
        return p / np.linalg.norm(p)


class ViewSetKind(str, Enum):
    SEARCH_SPACE = "search_space"
    CLASS_SET = "class_set"


class ViewSet(BaseModel):
    model_config = ConfigDict(frozen=True)

    views: tuple[View, ...]
    radius: float = Field(..., gt=0.0)
    kind: ViewSetKind = ViewSetKind.SEARCH_SPACE

    @model_validator(mode="after")
    def _check(self) -> "ViewSet":
        for index, view in enumerate(self.views):
            if view.id != index:
                raise ValueError(f"view ids must be 0..n-1, found {view.id} at {index}")
            if abs(float(np.linalg.norm(view.position)) - self.radius) > 1e-9:
                raise ValueError(f"view {view.id} is not on the sphere of radius {self.radius}")
        return self

    def __len__(self) -> int:
        return len(self.views)

    def __getitem__(self, index: int) -> View:
        return self.views[index]

    def __iter__(self):  # type: ignore[override]
        return iter(self.views)

    def directions(self) -> np.ndarray:
        return np.array([v.direction for v in self.views])


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self) -> None:
        vertices = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        triangles = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise InvalidArgumentError("triangle index out of range")
        vertices.setflags(write=False)
        triangles.setflags(write=False)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "triangles", triangles)

    def half_extent(self) -> float:
        """Largest absolute vertex coordinate."""
        if len(self.vertices) == 0:
            return 0.0
        return float(np.abs(self.vertices).max())

    def translated(self, offset: Sequence[float]) -> "TriangleMesh":
        return TriangleMesh(self.vertices + np.asarray(offset, dtype=np.float64), self.triangles)

    def corners(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        t = self.triangles
        return self.vertices[t[:, 0]], self.vertices[t[:, 1]], self.vertices[t[:, 2]]


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self) -> None:
        points = np.ascontiguousarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.isfinite(points).all():
            raise InvalidArgumentError("point cloud contains NaN or infinite coordinates")
        points.setflags(write=False)
        object.__setattr__(self, "points", points)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def is_empty(self) -> bool:
        return len(self.points) == 0

    def union(self, other: "PointCloud") -> "PointCloud":
        return PointCloud(np.concatenate([self.points, other.points]))

    def subset(self, mask: np.ndarray) -> "PointCloud":
        return PointCloud(self.points[mask])

    @cached_property
    def index(self) -> "SpatialIndex":
        from nbv_planner.metrics import SpatialIndex

        return SpatialIndex(self)


@dataclass(frozen=True)
class DepthImage:
    width: int
    height: int
    fov_y: float
    depths: np.ndarray
    view: View

    @property
    def focal(self) -> float:
        return focal_length(self.height, self.fov_y)

    def valid(self) -> np.ndarray:
        return np.isfinite(self.depths)


def focal_length(height: int, fov_y: float) -> float:
    return (height / 2.0) / math.tan(fov_y / 2.0)


def _pixel_rays(width: int, height: int, f: float) -> np.ndarray:
    """Camera-frame ray directions with unit z component, shape (H, W, 3)."""
    u = (np.arange(width) + 0.5 - width / 2.0) / f
    v = (np.arange(height) + 0.5 - height / 2.0) / f
    xc, yc = np.meshgrid(u, v)
    return np.stack([xc, yc, np.ones_like(xc)], axis=-1)


def generate_view_sphere(
    count: int,
    radius: float,
    hemisphere_only: bool = False,
    kind: ViewSetKind = ViewSetKind.SEARCH_SPACE,
) -> ViewSet:
    """Fibonacci-spiral views on a sphere (or its z >= 0 half), all facing the origin."""
    if count < 1:
        raise InvalidArgumentError(f"view count must be positive, got {count}")
    if radius <= 0:
        raise InvalidArgumentError(f"view sphere radius must be positive, got {radius}")

    views = []
    for i in range(count):
        if hemisphere_only:
            z = 1.0 - (i + 0.5) / count
        else:
            z = 1.0 - (2.0 * i + 1.0) / count
        rho = math.sqrt(max(0.0, 1.0 - z * z))
        phi = i * GOLDEN_ANGLE
        unit = np.array([rho * math.cos(phi), rho * math.sin(phi), z])
        unit /= np.linalg.norm(unit)
        views.append(View.looking_at_origin(radius * unit, i))
    return ViewSet(views=tuple(views), radius=radius, kind=kind)


def render_depth(
    mesh: TriangleMesh, view: View, width: int, height: int, fov_y: float
) -> DepthImage:
    """Nearest-hit ray casting (Moller-Trumbore) through a pinhole camera."""
    if len(mesh.triangles) == 0:
        raise InvalidArgumentError("cannot render a mesh with zero triangles")
    if width < 1 or height < 1:
        raise InvalidArgumentError(f"image size must be positive, got {width}x{height}")

    origin = view.position
    rays = _pixel_rays(width, height, focal_length(height, fov_y))
    dirs = (rays @ view.rotation.T).reshape(-1, 3)
    v0, v1, v2 = mesh.corners()
    e1 = v1 - v0
    e2 = v2 - v0
    s = origin[None, :] - v0
    q = np.cross(s, e1)
    # Per-triangle terms that do not depend on the ray
    t_num = np.einsum("ij,ij->i", e2, q)

    best = np.full(len(dirs), NO_HIT)
    tol = 1e-12
    chunk = max(1, _RENDER_CHUNK // len(dirs))
    for start in range(0, len(v0), chunk):
        sl = slice(start, start + chunk)
        p = np.cross(dirs[:, None, :], e2[None, sl, :])
        det = np.einsum("tj,rtj->rt", e1[sl], p)
        ok = np.abs(det) > 1e-18
        inv = np.divide(1.0, det, out=np.zeros_like(det), where=ok)
        u = np.einsum("tj,rtj->rt", s[sl], p) * inv
        v = (dirs @ q[sl].T) * inv
        t = t_num[None, sl] * inv
        hit = ok & (u >= -tol) & (v >= -tol) & (u + v <= 1.0 + tol) & (t > 1e-12)
        t = np.where(hit, t, NO_HIT)
        np.minimum(best, t.min(axis=1), out=best)

    # Range limit of the simulated sensor
    best[best > 2.0 * float(np.linalg.norm(origin))] = NO_HIT
    return DepthImage(width, height, fov_y, best.reshape(height, width), view)


def depth_to_cloud(image: DepthImage) -> PointCloud:
    """Back-project valid pixels and express them in the global frame."""
    valid = image.valid()
    if not valid.any():
        return PointCloud()
    rays = _pixel_rays(image.width, image.height, image.focal)[valid]
    camera_points = rays * image.depths[valid][:, None]
    return PointCloud(camera_points @ image.view.rotation.T + image.view.position)


def perceive(
    mesh: TriangleMesh, view: View, width: int, height: int, fov_y: float
) -> PointCloud:
    return depth_to_cloud(render_depth(mesh, view, width, height, fov_y))


# --- procedural objects -------------------------------------------------------


def box_mesh(half_extents: Sequence[float]) -> TriangleMesh:
    """Axis-aligned box centered at the origin, outward winding."""
    hx, hy, hz = (float(h) for h in half_extents)
    vertices = np.array(
        [[sx * hx, sy * hy, sz * hz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]
    )
    # vertex index = 4*ix + 2*iy + iz
    triangles = np.array(
        [
            [0, 1, 3], [0, 3, 2],  # -x
            [4, 6, 7], [4, 7, 5],  # +x
            [0, 4, 5], [0, 5, 1],  # -y
            [2, 3, 7], [2, 7, 6],  # +y
            [0, 2, 6], [0, 6, 4],  # -z
            [1, 5, 7], [1, 7, 3],  # +z
        ]
    )  # fmt: skip
    return TriangleMesh(vertices, triangles)


def _grid_triangles(rows: int, cols: int, wrap_cols: bool, offset: int = 0) -> list[list[int]]:
    """Quads of a rows x cols vertex lattice split into triangles."""
    tris = []
    last_col = cols if wrap_cols else cols - 1
    for r in range(rows - 1):
        for c in range(last_col):
            c2 = (c + 1) % cols
            a = offset + r * cols + c
            b = offset + r * cols + c2
            d = offset + (r + 1) * cols + c
            e = offset + (r + 1) * cols + c2
            tris.append([a, d, e])
            tris.append([a, e, b])
    return tris


def _revolve(profile: Sequence[tuple[float, float]], slices: int) -> TriangleMesh:
    """Surface of revolution about z from (radius, z) pairs ordered top to bottom.

    The first and last profile points must sit on the axis (radius 0) and become poles.
    """
    rings = profile[1:-1]
    vertices = [[0.0, 0.0, profile[0][1]]]
    for radius, z in rings:
        for j in range(slices):
            phi = 2.0 * math.pi * j / slices
            vertices.append([radius * math.cos(phi), radius * math.sin(phi), z])
    vertices.append([0.0, 0.0, profile[-1][1]])
    bottom = len(vertices) - 1

    tris: list[list[int]] = []
    for j in range(slices):
        tris.append([0, 1 + j, 1 + (j + 1) % slices])
    tris.extend(_grid_triangles(len(rings), slices, wrap_cols=True, offset=1))
    last = 1 + (len(rings) - 1) * slices
    for j in range(slices):
        tris.append([bottom, last + (j + 1) % slices, last + j])
    return TriangleMesh(np.array(vertices), np.array(tris))


def sphere_mesh(radius: float, stacks: int = 16, slices: int = 32) -> TriangleMesh:
    profile = []
    for i in range(stacks + 1):
        theta = math.pi * i / stacks
        profile.append((radius * math.sin(theta), radius * math.cos(theta)))
    profile[0] = (0.0, radius)
    profile[-1] = (0.0, -radius)
    return _revolve(profile, slices)


def capsule_mesh(
    radius: float, half_length: float, cap_stacks: int = 8, slices: int = 24
) -> TriangleMesh:
    profile = []
    for i in range(cap_stacks + 1):
        theta = 0.5 * math.pi * i / cap_stacks
        profile.append((radius * math.sin(theta), half_length + radius * math.cos(theta)))
    for i in range(cap_stacks + 1):
        theta = 0.5 * math.pi + 0.5 * math.pi * i / cap_stacks
        profile.append((radius * math.sin(theta), -half_length + radius * math.cos(theta)))
    profile[0] = (0.0, half_length + radius)
    profile[-1] = (0.0, -half_length - radius)
    return _revolve(profile, slices)


def torus_mesh(major: float, minor: float, rings: int = 32, sides: int = 12) -> TriangleMesh:
    vertices = []
    for i in range(rings):
        u = 2.0 * math.pi * i / rings
        for j in range(sides):
            w = 2.0 * math.pi * j / sides
            r = major + minor * math.cos(w)
            vertices.append([r * math.cos(u), r * math.sin(u), minor * math.sin(w)])
    tris = []
    for i in range(rings):
        i2 = (i + 1) % rings
        for j in range(sides):
            j2 = (j + 1) % sides
            a, b = i * sides + j, i * sides + j2
            c, d = i2 * sides + j, i2 * sides + j2
            tris.append([a, c, d])
            tris.append([a, d, b])
    return TriangleMesh(np.array(vertices), np.array(tris))


def extrude_l(arm: float, width: float, thickness: float) -> TriangleMesh:
    """L-shaped prism: outline in the xy plane, extruded along z."""
    outline = [(0.0, 0.0), (arm, 0.0), (arm, width), (width, width), (width, arm), (0.0, arm)]
    n = len(outline)
    h = thickness / 2.0
    vertices = [[x, y, -h] for x, y in outline] + [[x, y, h] for x, y in outline]
    tris = []
    # vertex 0 is the convex corner that sees the whole outline
    for k in range(1, n - 1):
        tris.append([0, k + 1, k])
        tris.append([n, n + k, n + k + 1])
    for k in range(n):
        k2 = (k + 1) % n
        tris.append([k, k2, n + k2])
        tris.append([k, n + k2, n + k])
    return TriangleMesh(np.array(vertices), np.array(tris))


def _merge(meshes: Sequence[TriangleMesh]) -> TriangleMesh:
    vertices, triangles, offset = [], [], 0
    for mesh in meshes:
        vertices.append(mesh.vertices)
        triangles.append(mesh.triangles + offset)
        offset += len(mesh.vertices)
    return TriangleMesh(np.concatenate(vertices), np.concatenate(triangles))


def _transformed(mesh: TriangleMesh, rotation: np.ndarray, offset: Sequence[float]) -> TriangleMesh:
    return TriangleMesh(mesh.vertices @ rotation.T + np.asarray(offset), mesh.triangles)


def _fit(mesh: TriangleMesh, scale: float) -> TriangleMesh:
    """Center on the bounding box and scale to a half-extent of `scale`."""
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    centered = mesh.vertices - (lo + hi) / 2.0
    return TriangleMesh(centered * (scale / np.abs(centered).max()), mesh.triangles)


def generate_demo_object(kind: str, seed: int = 0, scale: float = 0.12) -> TriangleMesh:
    """Deterministic closed mesh for (kind, seed, scale), centered at the origin."""
    if scale <= 0:
        raise InvalidArgumentError(f"object scale must be positive, got {scale}")
    rng = np.random.default_rng(seed)

    if kind == "sphere":
        return sphere_mesh(scale)
    if kind == "box":
        dims = np.concatenate([[1.0], rng.uniform(0.5, 1.0, size=2)])
        return box_mesh(scale * rng.permutation(dims))
    if kind == "lshape":
        width = rng.uniform(0.3, 0.5)
        thickness = rng.uniform(0.4, 0.8)
        return _fit(extrude_l(1.0, width, thickness), scale)
    if kind == "torus":
        ratio = rng.uniform(0.25, 0.4)
        return _fit(torus_mesh(1.0, ratio), scale)
    if kind == "capsule":
        ratio = rng.uniform(0.3, 0.5)
        tilt = Rotation.from_euler("xz", [rng.uniform(0.0, math.pi / 3), rng.uniform(0.0, math.pi)])
        capsule = _transformed(capsule_mesh(ratio, 1.0 - ratio), tilt.as_matrix(), [0, 0, 0])
        return _fit(capsule, scale)
    if kind == "composite":
        parts = [box_mesh(rng.uniform(0.3, 0.6, size=3))]
        for _ in range(int(rng.integers(2, 4))):
            rot = Rotation.from_euler("xyz", rng.uniform(0.0, math.pi, size=3)).as_matrix()
            offset = rng.uniform(-0.5, 0.5, size=3)
            if rng.random() < 0.5:
                part = box_mesh(rng.uniform(0.15, 0.35, size=3))
            else:
                radius = rng.uniform(0.1, 0.2)
                part = capsule_mesh(radius, rng.uniform(0.1, 0.3), cap_stacks=4, slices=12)
            parts.append(_transformed(part, rot, offset))
        return _fit(_merge(parts), scale)
    raise InvalidArgumentError(f"unknown object kind: {kind}")


def _subdivision_coefficients(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric (a, b) of the centroids of the n*n sub-triangles."""
    a, b = [], []
    for i in range(n):
        for j in range(n - i):
            a.append((3 * i + 1) / (3.0 * n))
            b.append((3 * j + 1) / (3.0 * n))
            if i + j <= n - 2:
                a.append((3 * i + 2) / (3.0 * n))
                b.append((3 * j + 2) / (3.0 * n))
    return np.array(a), np.array(b)


def sample_surface(mesh: TriangleMesh, spacing: float) -> PointCloud:
    """Dense ground-truth sampling: every surface point lies within `spacing` of a sample.

    Each triangle is split into n*n congruent sub-triangles whose diameter is at
    most `spacing`; their centroids are the samples.
    """
    if spacing <= 0:
        raise InvalidArgumentError(f"sampling spacing must be positive, got {spacing}")
    v0, v1, v2 = mesh.corners()
    e1 = v1 - v0
    e2 = v2 - v0
    longest = np.max(
        np.stack(
            [
                np.linalg.norm(e1, axis=1),
                np.linalg.norm(e2, axis=1),
                np.linalg.norm(v2 - v1, axis=1),
            ]
        ),
        axis=0,
    )
    divisions = np.maximum(1, np.ceil(longest / spacing)).astype(np.int64)

    chunks = []
    for n in np.unique(divisions):
        idx = np.nonzero(divisions == n)[0]
        a, b = _subdivision_coefficients(int(n))
        pts = (
            v0[idx, None, :]
            + a[None, :, None] * e1[idx, None, :]
            + b[None, :, None] * e2[idx, None, :]
        )
        chunks.append(pts.reshape(-1, 3))
    if not chunks:
        return PointCloud()
    return PointCloud(np.concatenate(chunks))
