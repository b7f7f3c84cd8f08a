"""Multi-ray midpoint triangulation and track acceptance tests."""

import numpy as np

TRIANGULATION_MIN_ANGLE_DEG = 1.5
_MAX_RAYS_FOR_ANGLE = 12


def triangulate_rays(centers: np.ndarray, dirs: np.ndarray):
    """Least-squares point minimizing distance to all rays (midpoint method).

    Solves sum_i (I - d_i d_i^T) (X - c_i) = 0. Exact for intersecting
    noise-free rays.

    Returns:
        (3,) point or None for (near-)parallel ray bundles.
    """
    d = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    proj = np.eye(3)[None] - d[:, :, None] * d[:, None, :]
    a = proj.sum(axis=0)
    b = np.einsum("nij,nj->i", proj, centers)
    det = np.linalg.det(a)
    if abs(det) < 1e-12:
        return None
    return np.linalg.solve(a, b)


def triangulate_two_view(
    r: np.ndarray, t: np.ndarray, b1: np.ndarray, b2: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized two-ray midpoint triangulation in camera-1 coordinates.

    Camera 1 is the identity; camera 2 maps x2 = r @ x1 + t. Rays:
    x = s*b1 and x = c2 + u*(r^T b2) with c2 = -r^T t.

    Returns:
        (points (N, 3), valid mask) - invalid where rays are parallel.
    """
    d1 = b1
    d2 = b2 @ r  # r^T @ b2 per row
    c2 = -(r.T @ t)
    # closed-form midpoint: solve the 2x2 system per correspondence
    w = -c2  # origin1 - origin2
    a11 = np.sum(d1 * d1, axis=1)
    a12 = -np.sum(d1 * d2, axis=1)
    a22 = np.sum(d2 * d2, axis=1)
    rhs1 = -np.sum(d1 * w, axis=1)
    rhs2 = np.sum(d2 * w, axis=1)
    det = a11 * a22 - a12 * a12
    valid = np.abs(det) > 1e-12
    det_safe = np.where(valid, det, 1.0)
    s = (rhs1 * a22 - a12 * rhs2) / det_safe
    u = (a11 * rhs2 - a12 * rhs1) / det_safe
    p1 = s[:, None] * d1
    p2 = c2 + u[:, None] * d2
    return 0.5 * (p1 + p2), valid


def max_pairwise_angle_deg(dirs: np.ndarray) -> float:
    """Largest angle between any two of the given unit directions."""
    d = dirs[:_MAX_RAYS_FOR_ANGLE]
    dots = d @ d.T
    return float(np.degrees(np.arccos(np.clip(dots.min(), -1.0, 1.0))))


def triangulation_angles_deg(dirs_per_item: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Batch max-pairwise-angle for ragged ray bundles.

    Args:
        dirs_per_item: (T, K, 3) padded unit directions (pad with the first
            ray so padding contributes angle 0).
        counts: true ray count per item (used only for sanity).

    Returns:
        (T,) max pairwise angle in degrees.
    """
    dots = np.einsum("tkj,tlj->tkl", dirs_per_item, dirs_per_item)
    min_dot = dots.min(axis=(1, 2))
    return np.degrees(np.arccos(np.clip(min_dot, -1.0, 1.0)))
