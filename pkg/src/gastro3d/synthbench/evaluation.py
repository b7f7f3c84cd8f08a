"""Quantitative evaluation against synthetic ground truth."""

from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateConfigurationError, InsufficientDataError
from ..geometry import rotation_angle_deg
from ..sfm.types import ReconstructionStats, compute_stats
from .scene import SyntheticScene


@dataclass(frozen=True)
class EvalReport:
    pose_rmse: float
    rot_rmse_deg: float
    point_to_surface_rms: float
    registered_pct: float
    stats: ReconstructionStats

    def to_dict(self) -> dict:
        return {
            "pose_rmse": self.pose_rmse,
            "rot_rmse_deg": self.rot_rmse_deg,
            "point_to_surface_rms": self.point_to_surface_rms,
            "registered_pct": self.registered_pct,
            "stats": self.stats.to_dict(),
        }


def align_similarity(estimated: np.ndarray, truth: np.ndarray):
    """Closed-form least-squares similarity (scale, rotation, translation).

    Finds s, R, t minimizing sum |s R e_i + t - t_i|^2 (orthogonal
    Procrustes with scale).

    Returns:
        (scale, rotation (3, 3), translation (3,), rmse).

    Raises:
        InsufficientDataError: fewer than 3 correspondences.
        DegenerateConfigurationError: collinear/degenerate input.
    """
    est = np.asarray(estimated, dtype=np.float64).reshape(-1, 3)
    tru = np.asarray(truth, dtype=np.float64).reshape(-1, 3)
    if len(est) != len(tru):
        raise InsufficientDataError("correspondence count mismatch")
    if len(est) < 3:
        raise InsufficientDataError("similarity alignment needs >= 3 points")
    mu_e = est.mean(axis=0)
    mu_t = tru.mean(axis=0)
    ec = est - mu_e
    tc = tru - mu_t
    cov = tc.T @ ec / len(est)
    u, s, vt = np.linalg.svd(cov)
    if s[1] < 1e-12 * max(s[0], 1e-300):
        raise DegenerateConfigurationError("input points are (near-)collinear")
    d = np.sign(np.linalg.det(u @ vt))
    diag = np.diag([1.0, 1.0, d])
    rotation = u @ diag @ vt
    var_e = np.mean(np.sum(ec * ec, axis=1))
    scale = float(np.trace(np.diag(s) @ diag) / var_e)
    translation = mu_t - scale * rotation @ mu_e
    aligned = scale * ec @ rotation.T + mu_t
    rmse = float(np.sqrt(np.mean(np.sum((aligned - tru) ** 2, axis=1))))
    return scale, rotation, translation, rmse


def evaluate(recon, mesh, scene: SyntheticScene) -> EvalReport:
    """Errors of a reconstruction (and optional mesh) vs the ground truth.

    Camera centers are aligned by similarity; rotation error is the
    geodesic angle after alignment; mesh vertices are measured against the
    analytic surface after the same alignment.

    Raises:
        InsufficientDataError: fewer than 3 registered frames.
    """
    reg_ids = [i for i in recon.registered_ids() if i < len(scene.trajectory)]
    if len(reg_ids) < 3:
        raise InsufficientDataError("evaluation needs >= 3 registered frames")
    est_centers = np.stack([recon.frames[i].center for i in reg_ids])
    true_centers = np.stack([scene.trajectory[i].center for i in reg_ids])
    scale, rotation, translation, pose_rmse = align_similarity(est_centers, true_centers)

    angles = []
    for i in reg_ids:
        r_aligned = recon.frames[i].rotation @ rotation.T
        angles.append(rotation_angle_deg(r_aligned, scene.trajectory[i].rotation))
    rot_rmse = float(np.sqrt(np.mean(np.asarray(angles) ** 2)))

    if mesh is not None and len(mesh.vertices):
        aligned_verts = scale * mesh.vertices @ rotation.T + translation
        dists = scene.surface.distance_to_surface(aligned_verts)
        point_rms = float(np.sqrt(np.mean(dists**2)))
    else:
        point_rms = float("nan")

    stats = compute_stats(recon)
    return EvalReport(
        pose_rmse=pose_rmse,
        rot_rmse_deg=rot_rmse,
        point_to_surface_rms=point_rms,
        registered_pct=stats.reconstructed_pct,
        stats=stats,
    )
