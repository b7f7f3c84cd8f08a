"""Two-view geometry on bearing vectors: essential matrix RANSAC,
decomposition, and relative-pose recovery.

Working with unit bearings (not normalized image coordinates) keeps the
math well-defined across the whole fisheye field of view.
"""

import numpy as np

from ..errors import InsufficientDataError
from ..geometry import skew
from .triangulation import triangulate_two_view

MIN_SAMPLE = 8


def essential_from_sample(b1: np.ndarray, b2: np.ndarray) -> np.ndarray | None:
    """8-point linear estimate of E with b2^T E b1 = 0, projected onto the
    essential manifold (singular values 1, 1, 0)."""
    a = (b2[:, :, None] * b1[:, None, :]).reshape(len(b1), 9)
    _, s, vt = np.linalg.svd(a)
    if s[-2] < 1e-12:  # rank-deficient sample (degenerate configuration)
        return None
    e = vt[-1].reshape(3, 3)
    u, _, vt2 = np.linalg.svd(e)
    return u @ np.diag([1.0, 1.0, 0.0]) @ vt2


def sampson_error(e: np.ndarray, b1: np.ndarray, b2: np.ndarray) -> np.ndarray:
    """First-order epipolar error for unit bearings, in squared radians.

    The denominator projects the epipolar gradients onto the tangent
    planes of the bearing sphere, which stays finite for incidence angles
    past 90 degrees (unlike the z=1 normalized-plane form).
    """
    eb1 = b1 @ e.T  # = E @ b1 per row
    etb2 = b2 @ e
    val = np.sum(b2 * eb1, axis=1)
    t1 = etb2 - b1 * np.sum(b1 * etb2, axis=1, keepdims=True)
    t2 = eb1 - b2 * np.sum(b2 * eb1, axis=1, keepdims=True)
    denom = np.sum(t1 * t1, axis=1) + np.sum(t2 * t2, axis=1)
    return val * val / np.maximum(denom, 1e-300)


def _ransac_iterations(inlier_ratio: float, confidence: float, sample: int, cap: int) -> int:
    good = inlier_ratio**sample
    if good <= 1e-12:
        return cap
    if good >= 1.0 - 1e-12:
        return 1
    n = np.log(max(1.0 - confidence, 1e-300)) / np.log(1.0 - good)
    return int(min(max(np.ceil(n), 1), cap))


def estimate_essential_ransac(
    b1: np.ndarray,
    b2: np.ndarray,
    rng: np.random.Generator,
    angular_threshold: float,
    confidence: float = 0.9999,
    max_iterations: int = 10_000,
) -> tuple[np.ndarray, np.ndarray] | None:
    """RANSAC essential-matrix fit over bearing correspondences.

    Args:
        b1, b2: (N, 3) unit bearings of the two views.
        rng: Seeded generator (determinism contract).
        angular_threshold: Inlier gate in radians on the Sampson error.

    Returns:
        (E, inlier mask) or None when no model beats the minimal sample.
    """
    n = len(b1)
    if n < MIN_SAMPLE:
        raise InsufficientDataError(f"essential RANSAC needs >= {MIN_SAMPLE} matches")
    thresh_sq = angular_threshold**2
    best_mask = None
    best_count = 0
    best_e = None
    max_needed = max_iterations
    it = 0
    while it < max_needed:
        it += 1
        sample = rng.choice(n, size=MIN_SAMPLE, replace=False)
        e = essential_from_sample(b1[sample], b2[sample])
        if e is None:
            continue
        err = sampson_error(e, b1, b2)
        mask = err < thresh_sq
        count = int(mask.sum())
        if count > best_count:
            best_count, best_mask, best_e = count, mask, e
            max_needed = min(
                max_iterations,
                _ransac_iterations(count / n, confidence, MIN_SAMPLE, max_iterations),
            )
    if best_e is None or best_count < MIN_SAMPLE:
        return None
    # final refit on all inliers for a stable model
    refit = essential_from_sample(b1[best_mask], b2[best_mask])
    if refit is not None:
        err = sampson_error(refit, b1, b2)
        mask = err < thresh_sq
        if mask.sum() >= best_count:
            best_e, best_mask = refit, mask
    return best_e, best_mask


def decompose_essential(
    e: np.ndarray, b1: np.ndarray, b2: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pick the (R, t) of the four essential decompositions by cheirality.

    Pose convention: camera 1 at identity, camera 2 pose maps world (==
    camera-1 frame) into camera 2: x2 = R @ x1 + t, with |t| = 1.

    Returns:
        (R, t, good): good flags the correspondences with positive range in
        both cameras under the winning solution.
    """
    u, _, vt = np.linalg.svd(e)
    if np.linalg.det(u) < 0:
        u = -u
    if np.linalg.det(vt) < 0:
        vt = -vt
    w = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    candidates = []
    for r in (u @ w @ vt, u @ w.T @ vt):
        for t in (u[:, 2], -u[:, 2]):
            candidates.append((r, t))
    best = None
    best_good = None
    best_count = -1
    for r, t in candidates:
        pts, valid = triangulate_two_view(r, t, b1, b2)
        range1 = np.sum(pts * b1, axis=1)
        pts2 = pts @ r.T + t
        range2 = np.sum(pts2 * b2, axis=1)
        good = valid & (range1 > 0) & (range2 > 0)
        count = int(good.sum())
        if count > best_count:
            best_count = count
            best = (r, t)
            best_good = good
    r, t = best
    return r, t, best_good


def epipolar_residual(r: np.ndarray, t: np.ndarray, b1: np.ndarray, b2: np.ndarray):
    """|b2^T E b1| for E = skew(t) @ R (diagnostic identity check)."""
    e = skew(t) @ r
    return np.abs(np.sum(b2 * (b1 @ e.T), axis=1))
