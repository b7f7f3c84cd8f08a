"""Perspective-n-point pose estimation: direct P3P + RANSAC + refinement."""

import numpy as np

from ..camera import project_jacobian_point, project_many
from ..errors import InsufficientDataError, RegistrationError
from ..geometry import RigidPose, exp_so3, orthonormalize, skew_many
from ..optim import levenberg_marquardt

MIN_CORRESPONDENCES = 15
MIN_INLIER_RATIO = 0.25


def _rigid_fit(src: np.ndarray, dst: np.ndarray):
    """Least-squares rotation/translation with dst = R @ src + t (Kabsch)."""
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    h = (dst - mu_d).T @ (src - mu_s)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(u @ vt))
    r = u @ np.diag([1.0, 1.0, d]) @ vt
    t = mu_d - r @ mu_s
    return r, t


def p3p_solve(world: np.ndarray, bearings: np.ndarray) -> list:
    """Minimal three-point pose: solutions mapping world into the camera.

    Solves the depth quartic obtained by eliminating one depth ratio from
    the three law-of-cosines constraints, then recovers each candidate pose
    with a rigid fit of the back-projected camera-frame points.

    Args:
        world: (3, 3) world points.
        bearings: (3, 3) unit observation bearings.

    Returns:
        List of RigidPose candidates (possibly empty).
    """
    p1, p2, p3 = world
    j1, j2, j3 = bearings / np.linalg.norm(bearings, axis=1, keepdims=True)

    a2 = float(np.sum((p2 - p3) ** 2))
    b2 = float(np.sum((p1 - p3) ** 2))
    c2 = float(np.sum((p1 - p2) ** 2))
    if min(a2, b2, c2) < 1e-20:
        return []
    cos_a = float(j2 @ j3)
    cos_b = float(j1 @ j3)
    cos_g = float(j1 @ j2)

    # with d2 = u*d1, d3 = v*d1:
    #   (I)  1 + u^2 - 2 u cos_g = (c2/b2) (1 + v^2 - 2 v cos_b)
    #   (II) u^2 + v^2 - 2 u v cos_a = (a2/b2) (1 + v^2 - 2 v cos_b)
    # subtracting isolates u as a rational function of v; substituting back
    # into (I) and clearing the denominator yields a quartic in v.
    cb = c2 / b2
    ab = a2 / b2
    # K1(v) = 1 - cb*(1 + v^2 - 2 v cos_b); K2(v) = v^2 - ab*(1 + ...)
    k1 = np.array([-cb, 2.0 * cb * cos_b, 1.0 - cb])  # coeffs [v^2, v, 1]
    k2 = np.array([1.0 - ab, 2.0 * ab * cos_b, -ab])
    num = k1 - k2  # u * D(v) = N(v), quadratic
    den = np.array([-2.0 * cos_a, 2.0 * cos_g])  # D(v) = 2 cos_g - 2 v cos_a

    # (I) rearranged is u^2 - 2 u cos_g + K1(v) = 0; substituting
    # u = N(v)/D(v) and multiplying by D^2 gives the quartic in v
    poly = np.polyadd(
        np.polyadd(np.convolve(num, num), -2.0 * cos_g * np.convolve(num, den)),
        np.convolve(k1, np.convolve(den, den)),
    )
    roots = np.roots(poly)

    poses = []
    for root in roots:
        if abs(root.imag) > 1e-8:
            continue
        v = float(root.real)
        if v <= 0:
            continue
        d_val = 2.0 * cos_g - 2.0 * v * cos_a
        if abs(d_val) < 1e-12:
            continue
        u = float(np.polyval(num, v)) / d_val
        if u <= 0:
            continue
        denom = 1.0 + v * v - 2.0 * v * cos_b
        if denom <= 1e-16:
            continue
        d1 = np.sqrt(b2 / denom)
        depths = np.array([d1, u * d1, v * d1])
        cam_pts = depths[:, None] * np.stack([j1, j2, j3])
        r, t = _rigid_fit(world, cam_pts)
        poses.append(RigidPose(orthonormalize(r), t))
    return poses


def _angular_errors(pose_r, pose_t, world, bearings):
    cam = world @ pose_r.T + pose_t
    norms = np.linalg.norm(cam, axis=1)
    unit = cam / np.maximum(norms, 1e-300)[:, None]
    dots = np.clip(np.sum(unit * bearings, axis=1), -1.0, 1.0)
    errs = np.arccos(dots)
    errs[norms < 1e-12] = np.pi
    return errs


def estimate_pose_ransac(
    world: np.ndarray,
    bearings: np.ndarray,
    rng: np.random.Generator,
    angular_threshold: float,
    confidence: float = 0.9999,
    max_iterations: int = 10_000,
    min_inliers: int = MIN_CORRESPONDENCES,
):
    """P3P RANSAC over 2D-3D correspondences (bearing form).

    The best minimal-sample pose is locally optimized: a nonlinear fit on
    its inliers, then inliers recounted (repeated once more if the support
    grew). Acceptance needs both an absolute inlier count and a ratio.

    Returns:
        (RigidPose, inlier mask).

    Raises:
        InsufficientDataError: fewer than MIN_CORRESPONDENCES inputs.
        RegistrationError: support below ``min_inliers`` or
            MIN_INLIER_RATIO.
    """
    n = len(world)
    if n < MIN_CORRESPONDENCES:
        raise InsufficientDataError(
            f"PnP needs >= {MIN_CORRESPONDENCES} correspondences, got {n}"
        )
    best_count = 0
    best_pose = None
    best_mask = None
    max_needed = max_iterations
    it = 0
    while it < max_needed:
        it += 1
        sample = rng.choice(n, size=3, replace=False)
        for pose in p3p_solve(world[sample], bearings[sample]):
            errs = _angular_errors(pose.rotation, pose.translation, world, bearings)
            mask = errs < angular_threshold
            count = int(mask.sum())
            if count > best_count:
                best_count, best_pose, best_mask = count, pose, mask
                good = (count / n) ** 3
                if good <= 1e-12:
                    max_needed = max_iterations
                elif good < 1.0 - 1e-12:
                    est = np.log(max(1.0 - confidence, 1e-300)) / np.log(1.0 - good)
                    max_needed = int(min(max_iterations, max(np.ceil(est), 1)))
                else:
                    max_needed = it
    if best_pose is None or best_count < 4:
        raise RegistrationError("PnP RANSAC found no acceptable pose")

    # local optimization: angular refit on the inlier set, recount, repeat
    # once more when the support grows
    for _ in range(2):
        refined = _refine_angular(best_pose, world[best_mask], bearings[best_mask])
        errs = _angular_errors(refined.rotation, refined.translation, world, bearings)
        mask = errs < angular_threshold
        count = int(mask.sum())
        if count >= best_count:
            grew = count > best_count
            best_pose, best_mask, best_count = refined, mask, count
            if not grew:
                break
        else:
            break

    if best_count < min_inliers:
        raise RegistrationError(
            f"PnP support too small: {best_count} inliers < {min_inliers}"
        )
    if best_count / n < MIN_INLIER_RATIO:
        raise RegistrationError(
            f"PnP inlier ratio {best_count / n:.2f} below {MIN_INLIER_RATIO}"
        )
    return best_pose, best_mask


def _refine_angular(pose: RigidPose, world: np.ndarray, bearings: np.ndarray) -> RigidPose:
    """Gauss-Newton pose polish on bearing direction residuals."""
    r, t = pose.rotation, pose.translation
    for _ in range(10):
        cam = world @ r.T + t
        norms = np.maximum(np.linalg.norm(cam, axis=1, keepdims=True), 1e-12)
        unit = cam / norms
        res = (unit - bearings).ravel()
        # d(unit)/d(cam) = (I - unit unit^T) / |cam|
        eye = np.eye(3)[None]
        j_unit = (eye - unit[:, :, None] * unit[:, None, :]) / norms[:, :, None]
        j_rot = -np.einsum("nij,njk->nik", j_unit, skew_many(cam - t))
        jac = np.concatenate([j_rot, j_unit], axis=2).reshape(-1, 6)
        jtj = jac.T @ jac + 1e-12 * np.eye(6)
        g = jac.T @ res
        try:
            delta = np.linalg.solve(jtj, -g)
        except np.linalg.LinAlgError:
            break
        r = exp_so3(delta[:3]) @ r
        t = t + delta[3:]
        if np.linalg.norm(delta) < 1e-14:
            break
    return RigidPose(orthonormalize(r), t)


def refine_pose(
    intr,
    pose: RigidPose,
    world: np.ndarray,
    pixels: np.ndarray,
    max_iters: int = 50,
) -> RigidPose:
    """LM refinement of a single pose over pixel reprojection errors."""

    state0 = (pose.rotation, pose.translation)

    def residual_fn(state):
        r, t = state
        uv, valid = project_many(intr, world @ r.T + t)
        res = uv - pixels
        res[~valid] = 1e3
        return res.ravel()

    def jacobian_fn(state):
        r, t = state
        cam = world @ r.T + t
        j_pt = project_jacobian_point(intr, cam)
        j_rot = -np.einsum("nij,njk->nik", j_pt, skew_many(cam - t))
        jac = np.concatenate([j_rot, j_pt], axis=2)
        return jac.reshape(-1, 6)

    def plus(state, delta):
        r, t = state
        return (exp_so3(delta[:3]) @ r, t + delta[3:])

    result = levenberg_marquardt(
        residual_fn, jacobian_fn, state0, plus=plus, max_iters=max_iters, cost_tol=1e-12
    )
    r, t = result.state
    return RigidPose(orthonormalize(r), t)
