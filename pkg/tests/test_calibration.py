"""Calibration tests against forward-synthesis oracles."""

import numpy as np
import pytest

from gastro3d.calibration import CalibrationView, calibrate, load_calibration_views
from gastro3d.camera import CameraIntrinsics, project_many
from gastro3d.errors import InsufficientDataError, InvalidInputError
from gastro3d.geometry import RigidPose, exp_so3

WIDTH, HEIGHT = 1920, 1080

TRUE_INTR = CameraIntrinsics(
    fx=600.0, fy=600.0, cx=960.0, cy=540.0,
    k1=0.05, k2=-0.01, k3=0.002, k4=0.0,
    width=WIDTH, height=HEIGHT,
)


def board_grid(cols=7, rows=5, spacing=0.03):
    xs, ys = np.meshgrid(np.arange(cols) * spacing, np.arange(rows) * spacing)
    pts = np.stack([xs.ravel(), ys.ravel(), np.zeros(cols * rows)], axis=1)
    return pts - pts.mean(axis=0)  # centered board


def synth_views(intr, n_views=6, noise=0.0, seed=0):
    """Project a 7x5 board through known intrinsics from varied poses."""
    rng = np.random.default_rng(seed)
    board = board_grid()
    views, poses = [], []
    for i in range(n_views):
        angle = np.deg2rad(25.0)
        axis = np.array(
            [np.cos(2 * np.pi * i / n_views), np.sin(2 * np.pi * i / n_views), 0.3]
        )
        axis /= np.linalg.norm(axis)
        rot = exp_so3(axis * angle * (0.5 + 0.5 * (i % 3)))
        t = np.array([0.02 * (i - n_views / 2), 0.015 * ((i % 3) - 1), 0.45 + 0.05 * i])
        pose = RigidPose(rot, t)
        cam_pts = pose.transform(board)
        uv, valid = project_many(intr, cam_pts)
        assert valid.all(), "synthetic board fell outside the model"
        if noise > 0:
            uv = uv + rng.normal(0.0, noise, uv.shape)
        views.append(CalibrationView(board_points=board, image_points=uv))
        poses.append(pose)
    return views, poses


def test_noise_free_recovery_within_1e4_relative():
    views, _ = synth_views(TRUE_INTR)
    result = calibrate(views, WIDTH, HEIGHT)
    est = result.intrinsics
    for name in ("fx", "fy", "cx", "cy"):
        true = getattr(TRUE_INTR, name)
        assert abs(getattr(est, name) - true) / abs(true) < 1e-4, name
    # distortion coefficients compared on the scale of k1
    for name in ("k1", "k2", "k3", "k4"):
        assert abs(getattr(est, name) - getattr(TRUE_INTR, name)) < 1e-4 * max(
            abs(TRUE_INTR.k1), 1e-3
        ), name


def test_noise_free_rms_below_1e6_px():
    views, _ = synth_views(TRUE_INTR)
    result = calibrate(views, WIDTH, HEIGHT)
    assert result.rms < 1e-6


def test_noise_floor_rms():
    views, _ = synth_views(TRUE_INTR, n_views=8, noise=0.2, seed=1)
    result = calibrate(views, WIDTH, HEIGHT)
    assert 0.1 < result.rms < 0.3  # 0.2 px +/- 50%


def test_recovered_poses_match_truth():
    views, poses = synth_views(TRUE_INTR)
    result = calibrate(views, WIDTH, HEIGHT)
    for est, true in zip(result.poses, poses):
        assert np.allclose(est.rotation, true.rotation, atol=1e-5)
        assert np.allclose(est.translation, true.translation, atol=1e-5)


def test_two_views_insufficient():
    views, _ = synth_views(TRUE_INTR)
    with pytest.raises(InsufficientDataError):
        calibrate(views[:2], WIDTH, HEIGHT)


def test_view_validation():
    board = board_grid()
    with pytest.raises(InvalidInputError):
        CalibrationView(board_points=board[:4], image_points=np.zeros((4, 2)))
    collinear = np.stack([np.arange(8) * 0.01, np.zeros(8), np.zeros(8)], axis=1)
    with pytest.raises(InvalidInputError):
        CalibrationView(board_points=collinear, image_points=np.zeros((8, 2)))


def test_load_calibration_views_text_and_json(tmp_path):
    views, _ = synth_views(TRUE_INTR, n_views=3)
    rows0 = np.column_stack([views[0].board_points[:, :2], views[0].image_points])
    np.savetxt(tmp_path / "view_000.txt", rows0)
    import json

    (tmp_path / "view_001.json").write_text(
        json.dumps(np.column_stack([views[1].board_points[:, :2], views[1].image_points]).tolist())
    )
    loaded = load_calibration_views(tmp_path)
    assert len(loaded) == 2
    assert np.allclose(loaded[0].board_points, views[0].board_points)
    assert np.allclose(loaded[1].image_points, views[1].image_points, atol=1e-9)
