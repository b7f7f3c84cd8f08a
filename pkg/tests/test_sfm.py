"""SfM tests: epipolar geometry, PnP, triangulation, BA, and the loop.

All oracles are forward-synthesized: known poses and points are projected
through the camera model, and the estimators must recover them.
"""

import numpy as np
import pytest

from gastro3d.camera import CameraIntrinsics, project_many, unproject_many
from gastro3d.errors import (
    InitializationError,
    InsufficientDataError,
    RegistrationError,
)
from gastro3d.features.matching import MatchSet
from gastro3d.geometry import RigidPose, exp_so3, rotation_angle_deg
from gastro3d.sfm import (
    Reconstruction,
    SfmConfig,
    Track,
    bundle_adjust,
    compute_stats,
    initialize_pair,
    reconstruct,
    register_next_image,
    triangulate_tracks,
)
from gastro3d.sfm import ba as ba_mod
from gastro3d.sfm.epipolar import (
    decompose_essential,
    epipolar_residual,
    estimate_essential_ransac,
    sampson_error,
)
from gastro3d.sfm.pnp import estimate_pose_ransac, p3p_solve, refine_pose
from gastro3d.sfm.triangulation import triangulate_rays, triangulate_two_view

INTR = CameraIntrinsics(fx=300.0, fy=300.0, cx=320.0, cy=240.0, width=640, height=480)


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def scene_points(n=200, seed=0):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n, 3)) * np.array([1.0, 0.8, 0.4])
    pts[:, 2] += 4.0
    return pts


class TestEpipolar:
    def test_pure_translation_recovery(self):
        pts = scene_points()
        pose2 = RigidPose(np.eye(3), np.array([-1.0, 0.0, 0.0]))  # camera moved +x
        b1 = unit(pts)
        b2 = unit(pose2.transform(pts))
        rng = np.random.default_rng(0)
        e, mask = estimate_essential_ransac(b1, b2, rng, angular_threshold=1e-6)
        assert mask.sum() >= 190
        r, t, good = decompose_essential(e, b1, b2)
        assert rotation_angle_deg(r, np.eye(3)) < 0.1
        t_dir = t / np.linalg.norm(t)
        angle = np.degrees(np.arccos(abs(float(t_dir @ np.array([-1.0, 0, 0])))))
        assert angle < 0.1

    def test_epipolar_identity_noise_free(self):
        pts = scene_points(seed=1)
        rot = exp_so3(np.array([0.02, -0.03, 0.01]))
        pose2 = RigidPose(rot, np.array([-0.8, 0.1, 0.05]))
        b1 = unit(pts)
        b2 = unit(pose2.transform(pts))
        rng = np.random.default_rng(1)
        e, mask = estimate_essential_ransac(b1, b2, rng, angular_threshold=1e-6)
        resid = epipolar_residual(pose2.rotation, pose2.translation, b1[mask], b2[mask])
        # identity holds for the ground-truth essential matrix
        assert np.max(resid) < 1e-9
        # and for the estimated one on its inliers
        assert np.max(np.abs(np.sum(b2[mask] * (b1[mask] @ e.T), axis=1))) < 1e-9

    def test_random_matches_no_model(self):
        rng = np.random.default_rng(2)
        b1 = unit(rng.normal(size=(150, 3)) + [0, 0, 3])
        b2 = unit(rng.normal(size=(150, 3)) + [0, 0, 3])
        result = estimate_essential_ransac(
            b1, b2, np.random.default_rng(3), angular_threshold=1e-6, max_iterations=300
        )
        if result is not None:
            _, mask = result
            assert mask.sum() < 30  # nowhere near real support

    def test_sampson_error_zero_for_exact(self):
        pts = scene_points(seed=3)
        pose2 = RigidPose(exp_so3([0.01, 0.02, 0.0]), np.array([-1.0, 0.0, 0.0]))
        from gastro3d.geometry import skew

        e = skew(pose2.translation) @ pose2.rotation
        b1 = unit(pts)
        b2 = unit(pose2.transform(pts))
        assert np.max(sampson_error(e, b1, b2)) < 1e-18


class TestPnP:
    def make_problem(self, n=50, seed=0):
        rng = np.random.default_rng(seed)
        world = rng.normal(size=(n, 3)) * 1.5 + np.array([0, 0, 5.0])
        rot = exp_so3(rng.normal(size=3) * 0.3)
        t = rng.normal(size=3) * 0.5
        pose = RigidPose(rot, t)
        cam = pose.transform(world)
        bearings = unit(cam)
        uv, valid = project_many(INTR, cam)
        return world[valid], bearings[valid], uv[valid], pose

    def test_noise_free_recovery(self):
        world, bearings, uv, pose = self.make_problem()
        est, mask = estimate_pose_ransac(
            world, bearings, np.random.default_rng(0), angular_threshold=1e-6
        )
        est = refine_pose(INTR, est, world[mask], uv[mask])
        assert rotation_angle_deg(est.rotation, pose.rotation) < np.degrees(1e-6)
        assert np.linalg.norm(est.translation - pose.translation) < 1e-6

    def test_too_few_correspondences(self):
        world, bearings, uv, _ = self.make_problem(n=10)
        with pytest.raises(InsufficientDataError):
            estimate_pose_ransac(
                world[:10], bearings[:10], np.random.default_rng(0), angular_threshold=1e-3
            )

    def test_outlier_robustness(self):
        world, bearings, uv, pose = self.make_problem(n=50, seed=4)
        rng = np.random.default_rng(5)
        n_out = int(0.4 * len(world))
        bad = rng.choice(len(world), size=n_out, replace=False)
        bearings_noisy = bearings.copy()
        bearings_noisy[bad] = unit(rng.normal(size=(n_out, 3)) + [0, 0, 2])
        est, mask = estimate_pose_ransac(
            world, bearings_noisy, np.random.default_rng(6), angular_threshold=2e-3
        )
        est = refine_pose(INTR, est, world[mask], uv[mask])
        scene_diam = np.ptp(world, axis=0).max()
        assert rotation_angle_deg(est.rotation, pose.rotation) < 0.5
        assert np.linalg.norm(est.center - pose.center) < 0.01 * scene_diam

    def test_p3p_all_solutions_valid(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            world = rng.normal(size=(3, 3)) * 2 + [0, 0, 6]
            rot = exp_so3(rng.normal(size=3) * 0.2)
            pose = RigidPose(rot, rng.normal(size=3))
            cam = pose.transform(world)
            if np.any(np.linalg.norm(cam, axis=1) < 0.5):
                continue
            sols = p3p_solve(world, unit(cam))
            errs = [
                np.max(np.abs(p.rotation - pose.rotation))
                + np.max(np.abs(p.translation - pose.translation))
                for p in sols
            ]
            assert min(errs) < 1e-8


class TestTriangulation:
    def test_exact_two_ray_intersection(self):
        centers = np.array([[-0.5, 0, 0], [0.5, 0, 0]])
        target = np.array([0.0, 0.0, 2.0])
        dirs = unit(target - centers)
        pt = triangulate_rays(centers, dirs)
        assert np.max(np.abs(pt - target)) < 1e-9

    def test_parallel_rays_rejected(self):
        centers = np.array([[-0.5, 0, 0], [0.5, 0, 0]])
        dirs = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
        assert triangulate_rays(centers, dirs) is None

    def test_multiview_noise(self):
        rng = np.random.default_rng(8)
        target = np.array([0.2, -0.1, 2.5])
        centers = np.stack(
            [np.array([np.cos(a), np.sin(a), 0.0]) for a in np.linspace(0, np.pi, 10)]
        )
        dirs = unit(target - centers)
        # 0.5 px noise at f=300 ~ 1.7e-3 rad perpendicular jitter
        noise = rng.normal(0, 0.5 / 300.0, size=(10, 3))
        noise -= dirs * np.sum(noise * dirs, axis=1, keepdims=True)
        pt = triangulate_rays(centers, unit(dirs + noise))
        assert np.linalg.norm(pt - target) < 0.01

    def test_two_view_vectorized_matches_general(self):
        pts = scene_points(50, seed=9)
        rot = exp_so3([0.05, 0.1, -0.02])
        pose2 = RigidPose(rot, np.array([-1.0, 0.2, 0.1]))
        b1 = unit(pts)
        b2 = unit(pose2.transform(pts))
        tri, valid = triangulate_two_view(pose2.rotation, pose2.translation, b1, b2)
        assert valid.all()
        assert np.max(np.linalg.norm(tri - pts, axis=1)) < 1e-8


def make_synthetic_recon(n_cams=6, n_pts=120, seed=0, noise_px=0.0):
    """Ground-truth multi-view scene packed into a Reconstruction."""
    rng = np.random.default_rng(seed)
    points = rng.normal(size=(n_pts, 3)) * np.array([1.2, 1.0, 0.5]) + [0, 0, 4.0]
    poses = []
    for i in range(n_cams):
        angle = 2 * np.pi * i / n_cams
        center = np.array([1.5 * np.cos(angle), 1.5 * np.sin(angle), -0.3])
        look = np.array([0.0, 0.0, 4.0])
        fwd = unit(look - center)
        right = unit(np.cross(fwd, [0, 0, 1.0]))
        down = np.cross(fwd, right)
        rot = np.stack([right, down, fwd])
        poses.append(RigidPose(rot, -rot @ center))

    recon = Reconstruction(intrinsics=INTR, input_image_ids=list(range(n_cams)))
    keypoints = {i: [] for i in range(n_cams)}
    tracks = []
    for pi in range(n_pts):
        track = Track()
        for ci, pose in enumerate(poses):
            cam = pose.transform(points[pi])
            uv, valid = project_many(INTR, cam[None])
            if not valid[0]:
                continue
            uv = uv[0]
            if noise_px > 0:
                uv = uv + rng.normal(0, noise_px, 2)
            if not (0 <= uv[0] < INTR.width and 0 <= uv[1] < INTR.height):
                continue
            track.observations.append((ci, len(keypoints[ci])))
            keypoints[ci].append(uv)
        if len(track.observations) >= 2:
            track.point3d = points[pi].copy()
            tracks.append(track)
    recon.tracks = tracks
    recon.keypoints = {i: np.asarray(k).reshape(-1, 2) for i, k in keypoints.items()}
    recon.bearings = {
        i: unproject_many(INTR, recon.keypoints[i]) if len(recon.keypoints[i]) else np.zeros((0, 3))
        for i in range(n_cams)
    }
    recon.frames = {i: poses[i] for i in range(n_cams)}
    return recon, poses, points


class TestBundleAdjust:
    def test_jacobian_matches_central_differences(self):
        recon, _, _ = make_synthetic_recon(n_cams=4, n_pts=30, seed=1)
        problem, state = ba_mod.collect_problem(recon, fixed_frames=())
        rng = np.random.default_rng(2)
        # random perturbation so we are away from the optimum
        state.points += rng.normal(0, 0.02, state.points.shape)
        for c in range(len(problem.cam_ids)):
            state.rotations[c] = exp_so3(rng.normal(0, 0.01, 3)) @ state.rotations[c]
            state.translations[c] += rng.normal(0, 0.01, 3)

        j_cam, j_pt, res, valid = ba_mod.jacobian_blocks(INTR, problem, state)
        eps = 1e-6

        def residual_of(st):
            r, _ = ba_mod.residuals(INTR, problem, st)
            return r

        # camera parameters
        for c in rng.choice(len(problem.cam_ids), size=2, replace=False):
            for k in range(6):
                d = np.zeros(6)
                d[k] = eps
                up = state.copy()
                dn = state.copy()
                if k < 3:
                    up.rotations[c] = exp_so3(d[:3]) @ state.rotations[c]
                    dn.rotations[c] = exp_so3(-d[:3]) @ state.rotations[c]
                else:
                    up.translations[c] = state.translations[c] + d[3:]
                    dn.translations[c] = state.translations[c] - d[3:]
                fd = (residual_of(up) - residual_of(dn)) / (2 * eps)
                sel = problem.obs_cam == c
                analytic = j_cam[sel, :, k].ravel()
                numeric = fd.reshape(-1, 2)[sel].ravel()
                rel = np.abs(analytic - numeric) / (np.abs(numeric) + 1.0)
                assert np.max(rel) < 1e-4

        # point parameters
        for p in rng.choice(state.points.shape[0], size=3, replace=False):
            for k in range(3):
                d = np.zeros(3)
                d[k] = eps
                up = state.copy()
                dn = state.copy()
                up.points[p] = state.points[p] + d
                dn.points[p] = state.points[p] - d
                fd = (residual_of(up) - residual_of(dn)) / (2 * eps)
                sel = problem.obs_pt == p
                analytic = j_pt[sel, :, k].ravel()
                numeric = fd.reshape(-1, 2)[sel].ravel()
                rel = np.abs(analytic - numeric) / (np.abs(numeric) + 1.0)
                assert np.max(rel) < 1e-4

    def test_perturbation_recovery(self):
        recon, poses, points = make_synthetic_recon(n_cams=5, n_pts=80, seed=3)
        rng = np.random.default_rng(4)
        # 1% perturbation of poses and points
        scale = 0.01
        for i in list(recon.frames):
            if i == 0:
                continue  # gauge
            pose = recon.frames[i]
            recon.frames[i] = RigidPose(
                exp_so3(rng.normal(0, scale, 3)) @ pose.rotation,
                pose.translation + rng.normal(0, scale, 3),
            )
        for tr in recon.tracks:
            tr.point3d = tr.point3d + rng.normal(0, scale, 3)

        report = ba_mod.bundle_adjust(recon, fixed_frames=(0,), max_iters=100)
        assert report.mean_reproj_px < 0.01
        assert report.pruned_observations == 0

    def test_already_optimal_is_fixed_point(self):
        recon, _, _ = make_synthetic_recon(n_cams=5, n_pts=80, seed=5)
        report = ba_mod.bundle_adjust(recon, fixed_frames=(0,), max_iters=50)
        assert report.pruned_observations == 0
        assert report.final_cost <= report.initial_cost
        assert report.initial_cost - report.final_cost < 1e-12 + 1e-9 * max(report.initial_cost, 1)

    def test_accepted_costs_non_increasing(self):
        recon, _, _ = make_synthetic_recon(n_cams=5, n_pts=60, seed=6, noise_px=0.5)
        rng = np.random.default_rng(7)
        for tr in recon.tracks:
            tr.point3d = tr.point3d + rng.normal(0, 0.05, 3)
        report = ba_mod.bundle_adjust(recon, fixed_frames=(0,), max_iters=60)
        costs = np.asarray(report.accepted_costs)
        assert np.all(np.diff(costs) <= 0)

    def test_insufficient_data(self):
        recon, _, _ = make_synthetic_recon(n_cams=2, n_pts=5, seed=8)
        with pytest.raises(InsufficientDataError):
            ba_mod.bundle_adjust(recon, fixed_frames=(0,))


class TestStats:
    def test_paper_style_truncation(self):
        recon = Reconstruction(intrinsics=INTR, input_image_ids=list(range(1483)))
        recon.frames = {i: RigidPose.identity() for i in range(1481)}
        stats = compute_stats(recon)
        assert stats.reconstructed_pct == 99.8

    def test_average_observation(self):
        recon = Reconstruction(intrinsics=INTR, input_image_ids=[0, 1])
        recon.frames = {0: RigidPose.identity(), 1: RigidPose.identity()}
        recon.tracks = [
            Track(observations=[(0, k), (1, k)], point3d=np.zeros(3)) for k in range(3)
        ] + [Track(observations=[(1, k)], point3d=np.zeros(3)) for k in range(3, 5)]
        stats = compute_stats(recon)
        # image 0 sees 3 triangulated obs, image 1 sees 5 -> mean 4
        assert stats.average_observation == 4.0
        assert stats.points3d == 5

    def test_zero_registered(self):
        recon = Reconstruction(intrinsics=INTR, input_image_ids=[0, 1, 2])
        stats = compute_stats(recon)
        assert stats.reconstructed_pct == 0.0
        assert stats.points3d == 0
        assert stats.average_observation == 0.0

    def test_exact_hundred_percent(self):
        recon = Reconstruction(intrinsics=INTR, input_image_ids=[0, 1])
        recon.frames = {0: RigidPose.identity(), 1: RigidPose.identity()}
        assert compute_stats(recon).reconstructed_pct == 100.0


def synth_features_and_matches(poses, points, noise_px=0.0, seed=0):
    """Craft per-image keypoints and exhaustive ground-truth match sets."""
    rng = np.random.default_rng(seed)
    n_cams = len(poses)
    keypoints = {i: [] for i in range(n_cams)}
    kp_of = {}  # (cam, point) -> kp index
    for ci, pose in enumerate(poses):
        cam = pose.transform(points)
        uv, valid = project_many(INTR, cam)
        for pi in range(len(points)):
            if not valid[pi]:
                continue
            u, v = uv[pi]
            if noise_px > 0:
                u += rng.normal(0, noise_px)
                v += rng.normal(0, noise_px)
            if not (0 <= u < INTR.width and 0 <= v < INTR.height):
                continue
            kp_of[(ci, pi)] = len(keypoints[ci])
            keypoints[ci].append([u, v])
    features = {
        i: (np.asarray(keypoints[i]).reshape(-1, 2), None) for i in range(n_cams)
    }
    match_sets = []
    for a in range(n_cams):
        for b in range(a + 1, n_cams):
            rows = [
                (kp_of[(a, pi)], kp_of[(b, pi)])
                for pi in range(len(points))
                if (a, pi) in kp_of and (b, pi) in kp_of
            ]
            idx = np.asarray(rows, dtype=np.int64).reshape(-1, 2)
            match_sets.append(
                MatchSet(image_pair=(a, b), indices=idx, distances=np.zeros(len(idx)))
            )
    return features, match_sets


class TestIncremental:
    def circle_poses(self, n_cams=8, radius=1.5):
        poses = []
        for i in range(n_cams):
            angle = 2 * np.pi * i / n_cams
            center = np.array([radius * np.cos(angle), radius * np.sin(angle), -0.2 * (i % 2)])
            fwd = unit(np.array([0.0, 0.0, 4.0]) - center)
            right = unit(np.cross(fwd, [0, 0, 1.0]))
            down = np.cross(fwd, right)
            rot = np.stack([right, down, fwd])
            poses.append(RigidPose(rot, -rot @ center))
        return poses

    def test_initialize_pair_synthetic(self):
        poses = self.circle_poses(3)
        points = scene_points(300, seed=10)
        features, match_sets = synth_features_and_matches(poses, points)
        recon = initialize_pair(match_sets, {i: f for i, f in features.items()}, INTR)
        assert len(recon.frames) == 2
        ids = sorted(recon.frames)
        assert np.allclose(recon.frames[ids[0]].rotation, np.eye(3))
        baseline = np.linalg.norm(recon.frames[ids[1]].center - recon.frames[ids[0]].center)
        assert np.isclose(baseline, 1.0, atol=1e-9)
        assert sum(1 for t in recon.tracks if t.point3d is not None) > 100

    def test_initialize_failure_on_random(self):
        rng = np.random.default_rng(11)
        features = {
            0: (rng.uniform(0, 480, size=(150, 2)), None),
            1: (rng.uniform(0, 480, size=(150, 2)), None),
        }
        perm = rng.permutation(150)
        idx = np.stack([np.arange(150), perm], axis=1)
        match_sets = [MatchSet(image_pair=(0, 1), indices=idx, distances=np.zeros(150))]
        with pytest.raises(InitializationError) as err:
            initialize_pair(match_sets, features, INTR)
        assert err.value.best_pair == (0, 1)

    def test_initialize_failure_zero_baseline(self):
        # identical projections in both images: no parallax
        poses = [self.circle_poses(4)[0]] * 2
        points = scene_points(250, seed=12)
        features, match_sets = synth_features_and_matches(poses, points)
        with pytest.raises(InitializationError):
            initialize_pair(match_sets, features, INTR)

    def test_full_loop_registers_everything(self):
        poses = self.circle_poses(8)
        points = scene_points(400, seed=13)
        features, match_sets = synth_features_and_matches(poses, points)
        images = {i: None for i in range(8)}
        recon, stats = reconstruct(
            images, INTR, SfmConfig(), features=features, match_sets=match_sets
        )
        assert stats.reconstructed_images == 8
        assert stats.reconstructed_pct == 100.0
        assert stats.points3d > 250
        # every retained observation reprojects within the bound
        errs = recon.reprojection_errors()
        assert np.max(errs) < 4.0
        # gauge: first registered camera at identity
        first = recon.gauge_pair[0]
        assert np.allclose(recon.frames[first].rotation, np.eye(3), atol=1e-12)
        assert np.allclose(recon.frames[first].translation, 0.0, atol=1e-12)
        # cheirality for every triangulated observation
        for tr in recon.tracks:
            if tr.point3d is None:
                continue
            for i, k in tr.observations:
                if i in recon.frames:
                    cam = recon.frames[i].transform(tr.point3d)
                    assert float(cam @ recon.bearings[i][k]) > 0

    def test_full_loop_pose_accuracy_after_alignment(self):
        poses = self.circle_poses(8)
        points = scene_points(400, seed=14)
        features, match_sets = synth_features_and_matches(poses, points, noise_px=0.3, seed=15)
        images = {i: None for i in range(8)}
        recon, stats = reconstruct(
            images, INTR, SfmConfig(), features=features, match_sets=match_sets
        )
        assert stats.reconstructed_images == 8
        est = np.stack([recon.frames[i].center for i in range(8)])
        true = np.stack([p.center for p in poses])
        # similarity alignment via Umeyama (scale + rotation + translation)
        mu_e, mu_t = est.mean(0), true.mean(0)
        ec, tc = est - mu_e, true - mu_t
        cov = tc.T @ ec / len(est)
        u, s, vt = np.linalg.svd(cov)
        d = np.sign(np.linalg.det(u @ vt))
        rot = u @ np.diag([1, 1, d]) @ vt
        scale = np.trace(np.diag(s) @ np.diag([1, 1, d])) / np.mean(np.sum(ec * ec, axis=1))
        aligned = scale * (ec @ rot.T) + mu_t
        rmse = np.sqrt(np.mean(np.sum((aligned - true) ** 2, axis=1)))
        extent = np.max(np.linalg.norm(true[:, None] - true[None, :], axis=-1))
        assert rmse < 0.02 * extent

    def test_determinism(self):
        poses = self.circle_poses(6)
        points = scene_points(250, seed=16)
        features, match_sets = synth_features_and_matches(poses, points, noise_px=0.2, seed=17)
        images = {i: None for i in range(6)}

        def run():
            import copy

            recon, stats = reconstruct(
                images, INTR, SfmConfig(),
                features={k: (v[0].copy(), v[1]) for k, v in features.items()},
                match_sets=copy.deepcopy(match_sets),
            )
            pts, _ = recon.points_and_colors()
            return stats, pts

        s1, p1 = run()
        s2, p2 = run()
        assert s1 == s2
        assert np.array_equal(p1, p2)

    def test_register_next_image_insufficient(self):
        recon, poses, points = make_synthetic_recon(n_cams=3, n_pts=30, seed=18)
        del recon.frames[2]
        for tr in recon.tracks:
            tr.point3d = None  # nothing triangulated -> no correspondences
        with pytest.raises(InsufficientDataError):
            register_next_image(recon, 2, {2: set(range(len(recon.tracks)))}, SfmConfig())
