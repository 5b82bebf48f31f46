"""Tests for the scene module."""

import math

import numpy as np
import pytest
from pydantic import ValidationError
from scipy.spatial import cKDTree

from nbv_planner.errors import InvalidArgumentError
from nbv_planner.scene import (
    NO_HIT,
    OBJECT_KINDS,
    PointCloud,
    TriangleMesh,
    View,
    ViewSet,
    _subdivision_coefficients,
    box_mesh,
    depth_to_cloud,
    generate_demo_object,
    generate_view_sphere,
    perceive,
    render_depth,
    sample_surface,
    sphere_mesh,
)


def test_view_looking_at_origin_points_camera_axis_inward():
    """Test that the camera +z axis points from the sensor to the origin."""
    rng = np.random.default_rng(4)
    for position in rng.normal(size=(20, 3)):
        view = View.looking_at_origin(position, 0)
        axis = view.rotation @ np.array([0.0, 0.0, 1.0])
        np.testing.assert_allclose(axis, -position / np.linalg.norm(position), atol=1e-12)
        assert view.gamma == 0.0


def test_view_at_origin_rejected():
    """Test that a view cannot sit at the origin."""
    with pytest.raises(InvalidArgumentError):
        View.looking_at_origin([0.0, 0.0, 0.0], 0)


def test_view_sphere_hemisphere():
    """Test a 14-view hemisphere: ids, radius and z >= 0."""
    views = generate_view_sphere(14, 0.4, hemisphere_only=True)

    assert len(views) == 14
    assert [v.id for v in views] == list(range(14))
    for view in views:
        assert view.z >= 0.0
        assert np.linalg.norm(view.position) == pytest.approx(0.4, abs=1e-12)


def test_view_sphere_full_sphere_is_balanced():
    """Test that the full sphere puts half of an even count below the equator."""
    views = generate_view_sphere(20, 1.0)
    assert sum(v.z < 0 for v in views) == 10


def test_view_sphere_is_deterministic():
    """Test that generation is a pure function of its arguments."""
    assert generate_view_sphere(14, 0.4, True) == generate_view_sphere(14, 0.4, True)


@pytest.mark.parametrize("count,radius", [(0, 0.4), (-3, 0.4), (14, 0.0), (14, -1.0)])
def test_view_sphere_invalid_arguments(count, radius):
    """Test that non-positive counts and radii are rejected."""
    with pytest.raises(InvalidArgumentError):
        generate_view_sphere(count, radius)


def test_view_set_rejects_misnumbered_views():
    """Test that view ids must run 0..n-1."""
    views = generate_view_sphere(3, 0.4)
    shuffled = (views[1], views[0], views[2])
    with pytest.raises(ValidationError):
        ViewSet(views=shuffled, radius=0.4)


def test_view_set_rejects_views_off_the_sphere():
    """Test that every view must sit on the sphere radius."""
    view = View.looking_at_origin([0.0, 0.0, 0.5], 0)
    with pytest.raises(ValidationError):
        ViewSet(views=(view,), radius=0.4)


def test_render_depth_center_pixel_of_box_top():
    """Test z-depth of the center pixel looking straight down at a box."""
    mesh = box_mesh([0.1, 0.1, 0.1])
    view = View.looking_at_origin([0.0, 0.0, 0.4], 0)

    image = render_depth(mesh, view, 5, 5, math.radians(45.0))

    assert image.depths.shape == (5, 5)
    assert image.depths[2, 2] == pytest.approx(0.3, abs=1e-9)


@pytest.mark.parametrize("direction", [(0, 0, 1), (1, 0, 0), (0, -1, 0), (1, 1, 1)])
def test_render_depth_center_pixel_of_sphere(direction):
    """Test that the center ray meets a sphere mesh at the sensor distance minus the radius."""
    mesh = sphere_mesh(0.1)
    unit = np.asarray(direction, dtype=float) / np.linalg.norm(direction)
    view = View.looking_at_origin(0.4 * unit, 0)

    image = render_depth(mesh, view, 5, 5, math.radians(30.0))

    assert image.depths[2, 2] == pytest.approx(0.3, abs=2e-3)


def _on_mesh(points, mesh, tol):
    """Per-point flag: within tol of a triangle's plane and inside that triangle."""
    v0, v1, v2 = mesh.corners()
    e1, e2 = v1 - v0, v2 - v0
    normals = np.cross(e1, e2)
    normals /= np.linalg.norm(normals, axis=1)[:, None]
    d = points[:, None, :] - v0[None, :, :]
    near_plane = np.abs(np.einsum("ptj,tj->pt", d, normals)) <= tol
    d00 = np.einsum("tj,tj->t", e1, e1)
    d01 = np.einsum("tj,tj->t", e1, e2)
    d11 = np.einsum("tj,tj->t", e2, e2)
    d20 = np.einsum("ptj,tj->pt", d, e1)
    d21 = np.einsum("ptj,tj->pt", d, e2)
    denom = d00 * d11 - d01 * d01
    b = (d11 * d20 - d01 * d21) / denom
    c = (d00 * d21 - d01 * d20) / denom
    inside = (b >= -1e-6) & (c >= -1e-6) & (b + c <= 1.0 + 1e-6)
    return (near_plane & inside).any(axis=1)


@pytest.mark.parametrize("kind", ["torus", "composite"])
def test_render_back_projection_lies_on_the_mesh(kind):
    """Test that every back-projected point of a curved object sits on its surface."""
    mesh = generate_demo_object(kind, 1, 0.1)
    for view in generate_view_sphere(4, 0.4):
        cloud = perceive(mesh, view, 24, 24, math.radians(45.0))

        assert not cloud.is_empty
        assert _on_mesh(cloud.points, mesh, 1e-6).all()


def test_depth_to_cloud_lands_on_the_visible_face():
    """Test that back-projected points lie on the face the camera sees."""
    mesh = box_mesh([0.1, 0.1, 0.1])
    view = View.looking_at_origin([0.0, 0.0, 0.4], 0)

    cloud = depth_to_cloud(render_depth(mesh, view, 9, 9, math.radians(20.0)))

    assert len(cloud) == 81
    np.testing.assert_allclose(cloud.points[:, 2], 0.1, atol=1e-9)
    assert np.all(np.abs(cloud.points[:, :2]) <= 0.1)


def test_render_misses_give_no_points():
    """Test that a view that sees nothing yields an empty cloud."""
    mesh = box_mesh([0.1, 0.1, 0.1]).translated([5.0, 5.0, 5.0])
    view = View.looking_at_origin([0.0, 0.0, 0.4], 0)

    image = render_depth(mesh, view, 8, 8, math.radians(45.0))

    assert np.all(image.depths == NO_HIT)
    assert perceive(mesh, view, 8, 8, math.radians(45.0)).is_empty


def test_render_respects_range_limit():
    """Test that surfaces beyond twice the sensor distance are not returned."""
    mesh = box_mesh([0.1, 0.1, 0.1]).translated([0.0, 0.0, -1.0])
    view = View.looking_at_origin([0.0, 0.0, 0.4], 0)

    image = render_depth(mesh, view, 5, 5, math.radians(10.0))

    assert np.all(image.depths == NO_HIT)


def test_render_nearest_hit_wins():
    """Test that the nearer of two stacked boxes occludes the farther one."""
    near = box_mesh([0.05, 0.05, 0.05]).translated([0.0, 0.0, 0.1])
    far = box_mesh([0.1, 0.1, 0.02]).translated([0.0, 0.0, -0.1])
    mesh = TriangleMesh(
        np.concatenate([near.vertices, far.vertices]),
        np.concatenate([near.triangles, far.triangles + len(near.vertices)]),
    )
    view = View.looking_at_origin([0.0, 0.0, 0.4], 0)

    image = render_depth(mesh, view, 5, 5, math.radians(45.0))

    assert image.depths[2, 2] == pytest.approx(0.25, abs=1e-9)


def test_render_requires_triangles():
    """Test that an empty mesh cannot be rendered."""
    mesh = TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    view = View.looking_at_origin([0.0, 0.0, 0.4], 0)
    with pytest.raises(InvalidArgumentError):
        render_depth(mesh, view, 4, 4, 1.0)


def test_triangle_mesh_rejects_bad_indices():
    """Test that triangle indices must address existing vertices."""
    with pytest.raises(InvalidArgumentError):
        TriangleMesh(np.zeros((3, 3)), np.array([[0, 1, 3]]))


def test_point_cloud_rejects_non_finite_points():
    """Test that NaN coordinates are refused."""
    with pytest.raises(InvalidArgumentError):
        PointCloud(np.array([[0.0, np.nan, 0.0]]))


def test_point_cloud_union_and_subset():
    """Test union concatenation and boolean subsets."""
    a = PointCloud(np.zeros((2, 3)))
    b = PointCloud(np.ones((3, 3)))

    merged = a.union(b)

    assert len(merged) == 5
    assert len(merged.subset(merged.points[:, 0] > 0.5)) == 3
    assert PointCloud().is_empty


@pytest.mark.parametrize("kind", OBJECT_KINDS)
def test_demo_objects_are_deterministic_and_scaled(kind):
    """Test every procedural kind: same seed same mesh, half-extent equals scale."""
    a = generate_demo_object(kind, seed=7, scale=0.12)
    b = generate_demo_object(kind, seed=7, scale=0.12)

    np.testing.assert_array_equal(a.vertices, b.vertices)
    np.testing.assert_array_equal(a.triangles, b.triangles)
    assert a.half_extent() == pytest.approx(0.12, rel=1e-9)
    assert len(a.triangles) > 0


def test_demo_object_unknown_kind():
    """Test that an unknown kind is rejected."""
    with pytest.raises(InvalidArgumentError):
        generate_demo_object("teapot")


@pytest.mark.parametrize("n", [1, 2, 3, 7])
def test_subdivision_coefficients_are_interior(n):
    """Test n*n sub-triangle centroids, all strictly inside the triangle."""
    a, b = _subdivision_coefficients(n)

    assert len(a) == n * n
    assert np.all(a > 0) and np.all(b > 0) and np.all(a + b < 1)


def test_sample_surface_density_bound():
    """Test that random surface points always have a sample within the spacing."""
    mesh = box_mesh([0.1, 0.07, 0.05])
    spacing = 0.02
    samples = sample_surface(mesh, spacing)

    rng = np.random.default_rng(0)
    v0, v1, v2 = mesh.corners()
    tri = rng.integers(0, len(mesh.triangles), size=2000)
    r1, r2 = rng.random(2000), rng.random(2000)
    flip = r1 + r2 > 1
    r1[flip], r2[flip] = 1 - r1[flip], 1 - r2[flip]
    targets = v0[tri] + r1[:, None] * (v1[tri] - v0[tri]) + r2[:, None] * (v2[tri] - v0[tri])

    distances, _ = cKDTree(samples.points).query(targets)
    assert distances.max() <= spacing


def test_sample_surface_rejects_bad_spacing():
    """Test that the spacing must be positive."""
    with pytest.raises(InvalidArgumentError):
        sample_surface(box_mesh([0.1, 0.1, 0.1]), 0.0)
