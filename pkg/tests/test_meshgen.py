"""Meshing-chain tests with brute-force and analytic oracles."""

import numpy as np
import pytest

from gastro3d.cloud import PointCloud
from gastro3d.errors import InvalidInputError
from gastro3d.geometry import RigidPose, exp_so3
from gastro3d.mesh import (
    TriangleMesh,
    edge_face_counts,
    euler_characteristic,
    is_closed_manifold,
    largest_component,
)
from gastro3d.meshgen import (
    FilterParams,
    downsample,
    estimate_normals,
    neighbor_count,
    orient_normals,
    poisson_reconstruct,
    remove_outliers,
)


def brute_force_outlier_oracle(points, neighbor_fraction=0.1, sigma_multiplier=2.0):
    """Independent O(n^2) all-pairs implementation of the removal rule."""
    n = len(points)
    k = int(np.ceil(n * neighbor_fraction))
    diffs = points[:, None, :] - points[None, :, :]
    d = np.sqrt(np.sum(diffs * diffs, axis=2))
    np.fill_diagonal(d, np.inf)
    d_sorted = np.sort(d, axis=1)
    mean_dists = d_sorted[:, :k].mean(axis=1)
    g_mean = mean_dists.mean()
    g_std = mean_dists.std()
    threshold = g_mean + sigma_multiplier * g_std
    keep = mean_dists <= threshold
    return keep, mean_dists, g_mean, g_std, threshold


def sphere_cloud(n=2000, seed=0, radius=1.0):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return PointCloud(points=v * radius)


class TestDownsample:
    def test_small_cloud_unchanged(self):
        cloud = sphere_cloud(500)
        out = downsample(cloud, 10_000, seed=1)
        assert out is cloud

    def test_exact_count_and_membership(self):
        cloud = sphere_cloud(25_000, seed=2)
        out = downsample(cloud, 10_000, seed=3)
        assert len(out) == 10_000
        # every sampled point is a member of the input
        pool = {tuple(p) for p in cloud.points}
        assert all(tuple(p) in pool for p in out.points[:200])

    def test_seed_determinism(self):
        cloud = sphere_cloud(5_000, seed=4)
        a = downsample(cloud, 1_000, seed=7)
        b = downsample(cloud, 1_000, seed=7)
        c = downsample(cloud, 1_000, seed=8)
        assert np.array_equal(a.points, b.points)
        assert not np.array_equal(a.points, c.points)

    def test_parallel_attributes_sliced(self):
        n = 100
        cloud = PointCloud(
            points=np.random.default_rng(0).normal(size=(n, 3)),
            colors=np.arange(n * 3, dtype=np.uint8).reshape(n, 3) % 255,
            observers=[[i] for i in range(n)],
        )
        out = downsample(cloud, 10, seed=0)
        for pt, col, obs in zip(out.points, out.colors, out.observers):
            i = obs[0]
            assert np.array_equal(cloud.points[i], pt)
            assert np.array_equal(cloud.colors[i], col)


class TestRemoveOutliers:
    def test_far_point_removed(self):
        # 11 points in a unit cluster + one at distance 100
        base = np.array(
            [[i % 3, (i // 3) % 3, i // 9] for i in range(11)], dtype=np.float64
        )
        pts = np.vstack([base, [100.0, 100.0, 100.0]])
        cloud = PointCloud(points=pts)
        out, report = remove_outliers(cloud, FilterParams(n=10))
        assert report.inlier_count == 11
        assert len(out) == 11
        assert np.max(np.abs(out.points)) < 10

    def test_uniform_cloud_nothing_removed(self):
        # two integer unit cubes far apart: with k = ceil(16 * 0.1) = 2,
        # every point's two nearest neighbors sit at exactly distance 1.0,
        # so sigma is exactly 0 and the strict > removes nothing
        cube = np.array(
            [[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=np.float64
        )
        pts = np.vstack([cube, cube + [100.0, 0.0, 0.0]])
        assert neighbor_count(16, 0.1) == 2
        out, report = remove_outliers(PointCloud(points=pts), FilterParams(n=10))
        assert report.global_std == 0.0
        assert report.threshold == report.global_mean
        assert report.inlier_count == 16
        assert len(out) == 16

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_brute_force_oracle(self, seed):
        rng = np.random.default_rng(seed)
        pts = rng.normal(size=(500, 3)) * [1.0, 0.5, 2.0]
        # add a few gross outliers
        pts[:10] += rng.normal(size=(10, 3)) * 50
        cloud = PointCloud(points=pts)
        out, report = remove_outliers(cloud)
        keep, mean_dists, g_mean, g_std, threshold = brute_force_outlier_oracle(pts)
        assert report.inlier_count == int(keep.sum())
        assert np.array_equal(out.points, pts[keep])
        assert np.max(np.abs(report.mean_dist_per_point - mean_dists)) < 1e-12
        assert abs(report.global_mean - g_mean) < 1e-12
        assert abs(report.global_std - g_std) < 1e-12
        assert abs(report.threshold - threshold) < 1e-12

    def test_report_arithmetic_recomputable(self):
        cloud = sphere_cloud(200, seed=5)
        _, report = remove_outliers(cloud)
        assert abs(report.mean_dist_per_point.mean() - report.global_mean) < 1e-12
        assert abs(report.mean_dist_per_point.std() - report.global_std) < 1e-12
        assert (
            abs(report.threshold - (report.global_mean + 2.0 * report.global_std)) == 0.0
        )

    def test_too_few_points(self):
        with pytest.raises(InvalidInputError):
            remove_outliers(PointCloud(points=np.zeros((5, 3))))


class TestEstimateNormals:
    def test_planar_points(self):
        rng = np.random.default_rng(6)
        pts = np.column_stack([rng.uniform(-1, 1, 500), rng.uniform(-1, 1, 500), np.zeros(500)])
        out = estimate_normals(PointCloud(points=pts))
        assert out.normal_valid.all()
        dots = np.abs(out.normals @ np.array([0.0, 0.0, 1.0]))
        assert np.min(dots) > 1.0 - 1e-6

    def test_sphere_normals_radial(self):
        cloud = sphere_cloud(10_000, seed=7)
        out = estimate_normals(cloud)
        dots = np.abs(np.sum(out.normals * cloud.points, axis=1))
        frac_good = np.mean(dots > np.cos(np.deg2rad(5.0)))
        assert frac_good > 0.99

    def test_too_few_points(self):
        with pytest.raises(InvalidInputError):
            estimate_normals(PointCloud(points=np.random.default_rng(0).normal(size=(10, 3))))

    def test_rigid_invariance(self):
        cloud = sphere_cloud(600, seed=8)
        rot = exp_so3(np.array([0.3, -0.2, 0.5]))
        t = np.array([2.0, -1.0, 0.5])
        moved = PointCloud(points=cloud.points @ rot.T + t)
        n0 = estimate_normals(cloud).normals
        n1 = estimate_normals(moved).normals
        # normals co-rotate up to per-point sign
        dots = np.abs(np.sum((n0 @ rot.T) * n1, axis=1))
        assert np.min(dots) > 1.0 - 1e-6

    def test_unit_norm(self):
        out = estimate_normals(sphere_cloud(300, seed=9))
        assert np.allclose(np.linalg.norm(out.normals, axis=1), 1.0, atol=1e-6)


class TestOrientNormals:
    def test_flip_toward_camera(self):
        cloud = PointCloud(
            points=np.array([[0.0, 0.0, 2.0]]),
            normals=np.array([[0.0, 0.0, 1.0]]),
        )
        frames = {0: RigidPose.identity()}  # camera at origin
        out = orient_normals(cloud, frames)
        assert np.allclose(out.normals[0], [0.0, 0.0, -1.0])

    def test_already_facing_unchanged(self):
        cloud = PointCloud(
            points=np.array([[0.0, 0.0, 2.0]]),
            normals=np.array([[0.0, 0.0, -1.0]]),
        )
        out = orient_normals(cloud, {0: RigidPose.identity()})
        assert np.allclose(out.normals[0], [0.0, 0.0, -1.0])

    def test_sphere_interior_camera_all_face_in(self):
        cloud = estimate_normals(sphere_cloud(3000, seed=10))
        frames = {0: RigidPose.identity()}  # camera at sphere center
        out = orient_normals(cloud, frames)
        to_cam = -out.points  # camera at origin
        dots = np.sum(out.normals * to_cam, axis=1)
        assert np.all(dots > 0)

    def test_observer_preference(self):
        # two cameras; the observing one is farther but must be used
        cam_near = RigidPose(np.eye(3), np.array([0.0, 0.0, -1.0]))   # center (0,0,1)
        cam_far = RigidPose(np.eye(3), np.array([0.0, 0.0, -10.0]))   # center (0,0,10)
        # point between them at z=2: near camera is closer
        cloud = PointCloud(
            points=np.array([[0.0, 0.0, 2.0]]),
            normals=np.array([[0.0, 0.0, 1.0]]),
            observers=[[7]],
        )
        out = orient_normals(cloud, {3: cam_near, 7: cam_far})
        # camera 7 at z=10 is the observer: normal must point toward +z
        assert out.normals[0][2] > 0

    def test_requires_cameras(self):
        cloud = PointCloud(points=np.zeros((1, 3)), normals=np.array([[0.0, 0.0, 1.0]]))
        with pytest.raises(InvalidInputError):
            orient_normals(cloud, {})


class TestPoisson:
    def oriented_sphere(self, n=10_000, seed=11):
        cloud = sphere_cloud(n, seed=seed)
        # analytic outward normals flipped inward (cameras at center)
        out = PointCloud(points=cloud.points, normals=-cloud.points.copy())
        return out

    def test_sphere_reconstruction(self):
        cloud = self.oriented_sphere()
        mesh = poisson_reconstruct(cloud, depth=6)
        assert is_closed_manifold(mesh)
        assert euler_characteristic(mesh) == 2
        radii = np.linalg.norm(mesh.vertices, axis=1)
        rms = np.sqrt(np.mean((radii - 1.0) ** 2))
        assert rms < 0.02
        # vertices inside the padded bounding box
        assert np.all(np.isfinite(mesh.vertices))
        assert np.max(np.abs(mesh.vertices)) < 1.0 * (1 + 2 * 0.125) + 1e-6

    def test_flipped_normals_invert_winding(self):
        cloud = self.oriented_sphere(n=4000, seed=12)
        mesh_a = poisson_reconstruct(cloud, depth=5)
        flipped = PointCloud(points=cloud.points, normals=-cloud.normals)
        mesh_b = poisson_reconstruct(flipped, depth=5)
        # same geometry (vertex sets nearly identical)
        assert mesh_a.vertices.shape == mesh_b.vertices.shape
        assert np.allclose(
            np.sort(mesh_a.vertices.ravel()), np.sort(mesh_b.vertices.ravel()), atol=1e-6
        )
        # winding reversed: signed volume changes sign
        def signed_volume(m):
            v = m.vertices[m.triangles]
            return np.sum(np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2]))) / 6.0

        assert signed_volume(mesh_a) * signed_volume(mesh_b) < 0

    def test_depth_validation(self):
        cloud = self.oriented_sphere(n=500)
        with pytest.raises(InvalidInputError):
            poisson_reconstruct(cloud, depth=4)
        with pytest.raises(InvalidInputError):
            poisson_reconstruct(PointCloud(points=cloud.points), depth=6)

    def test_invalid_normals_excluded(self):
        cloud = self.oriented_sphere(n=3000, seed=13)
        valid = np.ones(len(cloud), dtype=bool)
        valid[:100] = False
        cloud.normal_valid = valid
        mesh = poisson_reconstruct(cloud, depth=5)
        assert is_closed_manifold(mesh)


class TestMeshUtils:
    def tetrahedron(self):
        verts = np.array(
            [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=np.float64
        )
        faces = np.array([[0, 2, 1], [0, 1, 3], [1, 2, 3], [0, 3, 2]])
        return TriangleMesh(vertices=verts, triangles=faces)

    def test_tetrahedron_is_closed(self):
        mesh = self.tetrahedron()
        assert is_closed_manifold(mesh)
        assert euler_characteristic(mesh) == 2
        assert np.all(edge_face_counts(mesh.triangles) == 2)

    def test_open_mesh_detected(self):
        mesh = self.tetrahedron()
        open_mesh = TriangleMesh(vertices=mesh.vertices, triangles=mesh.triangles[:3])
        assert not is_closed_manifold(open_mesh)

    def test_largest_component(self):
        mesh = self.tetrahedron()
        far = mesh.vertices + 100.0
        verts = np.vstack([mesh.vertices, far])
        faces = np.vstack([mesh.triangles, mesh.triangles[:2] + 4])
        combined = TriangleMesh(vertices=verts, triangles=faces)
        kept = largest_component(combined)
        assert len(kept.triangles) == 4
        assert len(kept.vertices) == 4
