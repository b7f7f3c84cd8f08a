"""Fisheye calibration from planar-board correspondences.

Input views carry explicit (board point, image point) pairs; corner
detection is out of scope. Initialization is closed-form (homography
decomposition on the planar board, focal from the median r/theta ratio),
followed by a joint Levenberg-Marquardt refinement of intrinsics and all
per-view poses.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import (
    CameraIntrinsics,
    project_jacobian_intrinsics,
    project_jacobian_point,
    project_many,
)
from .errors import InsufficientDataError, InvalidInputError
from .geometry import RigidPose, exp_so3, orthonormalize, skew_many
from .optim import levenberg_marquardt

logger = logging.getLogger(__name__)

_MIN_VIEWS = 3
_MIN_POINTS_PER_VIEW = 6


@dataclass(frozen=True)
class CalibrationView:
    """Correspondences of one board observation.

    Attributes:
        board_points: (N, 3) board coordinates, z == 0.
        image_points: (N, 2) pixel coordinates.
    """

    board_points: np.ndarray
    image_points: np.ndarray

    def __post_init__(self):
        bp = np.asarray(self.board_points, dtype=np.float64).reshape(-1, 3)
        ip = np.asarray(self.image_points, dtype=np.float64).reshape(-1, 2)
        if bp.shape[0] != ip.shape[0]:
            raise InvalidInputError("board/image point counts differ")
        if bp.shape[0] < _MIN_POINTS_PER_VIEW:
            raise InvalidInputError("a view needs at least 6 correspondences")
        if np.max(np.abs(bp[:, 2])) > 1e-12:
            raise InvalidInputError("board points must have z = 0")
        # non-collinearity: the board xy coordinates must span 2 dimensions
        centered = bp[:, :2] - bp[:, :2].mean(axis=0)
        if np.linalg.matrix_rank(centered, tol=1e-9) < 2:
            raise InvalidInputError("board points are collinear")
        object.__setattr__(self, "board_points", bp)
        object.__setattr__(self, "image_points", ip)


@dataclass
class CalibrationResult:
    intrinsics: CameraIntrinsics
    poses: list
    rms: float


def _homography_dlt(src_xy: np.ndarray, dst_xy: np.ndarray) -> np.ndarray:
    """Normalized DLT homography mapping src (N,2) to dst (N,2)."""

    def normalizer(pts):
        mean = pts.mean(axis=0)
        scale = np.sqrt(2.0) / max(np.mean(np.linalg.norm(pts - mean, axis=1)), 1e-12)
        t = np.array([[scale, 0, -scale * mean[0]], [0, scale, -scale * mean[1]], [0, 0, 1]])
        return t

    t_src = normalizer(src_xy)
    t_dst = normalizer(dst_xy)
    src_h = np.column_stack([src_xy, np.ones(len(src_xy))]) @ t_src.T
    dst_h = np.column_stack([dst_xy, np.ones(len(dst_xy))]) @ t_dst.T

    n = len(src_xy)
    a = np.zeros((2 * n, 9))
    a[0::2, 0:3] = src_h
    a[0::2, 6:9] = -dst_h[:, [0]] * src_h
    a[1::2, 3:6] = src_h
    a[1::2, 6:9] = -dst_h[:, [1]] * src_h
    _, _, vt = np.linalg.svd(a)
    h = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_dst) @ h @ t_src
    return h / h[2, 2]


def _central_subset(view: CalibrationView, cx: float, cy: float, fraction: float = 0.2):
    """Indices of the correspondences closest to the principal point."""
    radii = np.linalg.norm(view.image_points - np.array([cx, cy]), axis=1)
    count = max(_MIN_POINTS_PER_VIEW, int(np.ceil(fraction * len(radii))))
    return np.argsort(radii, kind="stable")[:count]


def _initial_focal(views, cx, cy) -> float:
    """Zhang-style closed-form focal from central-region homographies.

    With the principal point pinned at the image center and pixels shifted
    accordingly, B = diag(1/fx^2, 1/fy^2, 1) yields two homogeneous linear
    constraints per view on the diagonal of B.
    """
    rows = []
    for view in views:
        sel = _central_subset(view, cx, cy)
        shifted = view.image_points[sel] - np.array([cx, cy])
        h = _homography_dlt(view.board_points[sel, :2], shifted)
        h1, h2 = h[:, 0], h[:, 1]

        def vrow(a, b):
            return np.array([a[0] * b[0], a[1] * b[1], a[2] * b[2]])

        rows.append(vrow(h1, h2))
        rows.append(vrow(h1, h1) - vrow(h2, h2))
    a = np.array(rows)
    _, _, vt = np.linalg.svd(a)
    b = vt[-1]
    if b[2] < 0:
        b = -b
    with np.errstate(invalid="ignore", divide="ignore"):
        fx2 = b[2] / b[0] if b[0] > 0 else np.nan
        fy2 = b[2] / b[1] if b[1] > 0 else np.nan
    if not (np.isfinite(fx2) and np.isfinite(fy2)):
        return np.nan
    return float(np.sqrt(0.5 * (fx2 + fy2)))


def _pose_from_homography(h: np.ndarray, f: float, cx: float, cy: float) -> RigidPose:
    """Decompose a board->pixel homography into a rigid pose given K."""
    k_inv = np.diag([1.0 / f, 1.0 / f, 1.0])
    h_shift = h.copy()
    h_shift[0] -= cx * h[2]
    h_shift[1] -= cy * h[2]
    m = k_inv @ h_shift
    lam = 1.0 / np.linalg.norm(m[:, 0])
    if m[2, 2] < 0:  # board must be in front of the camera
        lam = -lam
    r1 = lam * m[:, 0]
    r2 = lam * m[:, 1]
    r3 = np.cross(r1, r2)
    rotation = orthonormalize(np.column_stack([r1, r2, r3]))
    translation = lam * m[:, 2]
    return RigidPose(rotation, translation)


def _initialize(views, width, height):
    cx, cy = width / 2.0, height / 2.0
    focal = _initial_focal(views, cx, cy)
    if not np.isfinite(focal) or focal <= 0:
        # fall back to a generic wide-angle guess from the observed extent
        focal = 0.5 * max(width, height)
        logger.debug("closed-form focal failed; falling back to %.1f px", focal)

    poses = []
    for view in views:
        h = _homography_dlt(view.board_points[:, :2], view.image_points)
        poses.append(_pose_from_homography(h, focal, cx, cy))

    # refine the focal: with poses known, theta per correspondence is known
    # and r_obs/theta is an estimate of f (equidistant model, k == 0)
    ratios = []
    for view, pose in zip(views, poses):
        cam_pts = pose.transform(view.board_points)
        s = np.hypot(cam_pts[:, 0], cam_pts[:, 1])
        theta = np.arctan2(s, cam_pts[:, 2])
        r_obs = np.linalg.norm(view.image_points - np.array([cx, cy]), axis=1)
        good = theta > 1e-3
        ratios.extend((r_obs[good] / theta[good]).tolist())
    if ratios:
        focal = float(np.median(ratios))
    return focal, cx, cy, poses


def calibrate(
    views: list, width: int, height: int
) -> CalibrationResult:
    """Jointly estimate fisheye intrinsics and per-view poses.

    Minimizes the total squared reprojection error over (fx, fy, cx, cy,
    k1..k4) and one pose per view with Levenberg-Marquardt.

    Args:
        views: CalibrationView list, at least 3 with distinct orientations.
        width, height: Image size in pixels (recorded in the intrinsics).

    Returns:
        CalibrationResult with intrinsics, per-view poses, and the final
        RMS reprojection error in pixels.

    Raises:
        InsufficientDataError: Fewer than 3 views.
        ConvergenceError: LM diverged; the error carries the last iterate.
    """
    if len(views) < _MIN_VIEWS:
        raise InsufficientDataError(f"calibration needs >= {_MIN_VIEWS} views, got {len(views)}")

    focal, cx, cy, poses = _initialize(views, width, height)
    n_views = len(views)
    n_total = sum(len(v.board_points) for v in views)

    state0 = {
        "intr": np.array([focal, focal, cx, cy, 0.0, 0.0, 0.0, 0.0]),
        "poses": [(p.rotation, p.translation) for p in poses],
    }

    def make_intr(vec):
        return CameraIntrinsics(
            fx=vec[0], fy=vec[1], cx=min(max(vec[2], 0.0), width - 1e-6),
            cy=min(max(vec[3], 0.0), height - 1e-6),
            k1=vec[4], k2=vec[5], k3=vec[6], k4=vec[7],
            width=width, height=height,
        )

    def residual_fn(state):
        intr = make_intr(state["intr"])
        res = np.empty(2 * n_total)
        offset = 0
        for view, (rot, t) in zip(views, state["poses"]):
            cam_pts = view.board_points @ rot.T + t
            uv, valid = project_many(intr, cam_pts)
            block = uv - view.image_points
            block[~valid] = 1e3  # drive the optimizer away from invalid poses
            res[offset : offset + 2 * len(view.board_points)] = block.ravel()
            offset += 2 * len(view.board_points)
        return res

    def jacobian_fn(state):
        intr = make_intr(state["intr"])
        jac = np.zeros((2 * n_total, 8 + 6 * n_views))
        offset = 0
        for vi, (view, (rot, t)) in enumerate(zip(views, state["poses"])):
            n = len(view.board_points)
            cam_pts = view.board_points @ rot.T + t
            j_pt = project_jacobian_point(intr, cam_pts)  # (n,2,3)
            j_in = project_jacobian_intrinsics(intr, cam_pts)  # (n,2,8)
            rows = slice(offset, offset + 2 * n)
            jac[rows, 0:8] = j_in.reshape(2 * n, 8)
            # local rotation update R <- exp(w) R: d(cam)/dw = -skew(R X)
            rx = cam_pts - t
            d_rot = -np.einsum("nij,njk->nik", j_pt, skew_many(rx))
            d_tr = j_pt
            col = 8 + 6 * vi
            jac[rows, col : col + 3] = d_rot.reshape(2 * n, 3)
            jac[rows, col + 3 : col + 6] = d_tr.reshape(2 * n, 3)
            offset += 2 * n
        return jac

    def plus(state, delta):
        new_poses = []
        for vi, (rot, t) in enumerate(state["poses"]):
            col = 8 + 6 * vi
            w = delta[col : col + 3]
            dt = delta[col + 3 : col + 6]
            new_poses.append((exp_so3(w) @ rot, t + dt))
        return {"intr": state["intr"] + delta[0:8], "poses": new_poses}

    result = levenberg_marquardt(
        residual_fn, jacobian_fn, state0, plus=plus, lambda0=1e-3, max_iters=200, cost_tol=1e-10
    )

    intr = make_intr(result.state["intr"])
    out_poses = [RigidPose(orthonormalize(r), t) for r, t in result.state["poses"]]
    rms = float(np.sqrt(result.cost / n_total))
    logger.info("calibration: %d views, %d points, rms %.4g px", n_views, n_total, rms)
    return CalibrationResult(intrinsics=intr, poses=out_poses, rms=rms)




def load_calibration_views(directory) -> list:
    """Read correspondence files: one view per file, rows 'bx by ix iy'.

    Accepts whitespace-separated text or a JSON list of 4-element rows.
    Board coordinates are meters (z = 0 implied), image coordinates pixels.
    """
    directory = Path(directory)
    views = []
    files = sorted(p for p in directory.iterdir() if p.suffix in (".txt", ".json"))
    if not files:
        raise InsufficientDataError(f"no correspondence files in {directory}")
    for path in files:
        if path.suffix == ".json":
            import json

            rows = np.asarray(json.loads(path.read_text()), dtype=np.float64)
        else:
            rows = np.loadtxt(path, dtype=np.float64, ndmin=2)
        if rows.shape[1] != 4:
            raise InvalidInputError(f"{path.name}: expected 4 columns (bx by ix iy)")
        board = np.column_stack([rows[:, 0], rows[:, 1], np.zeros(len(rows))])
        views.append(CalibrationView(board_points=board, image_points=rows[:, 2:4]))
    return views
