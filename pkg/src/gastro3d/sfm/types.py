"""SfM state: tracks, the reconstruction, and summary statistics."""

from dataclasses import dataclass, field

import numpy as np

from ..camera import CameraIntrinsics, project_many
from ..geometry import RigidPose


@dataclass
class Track:
    """A chain of 2D observations hypothesized to view one 3D point.

    Attributes:
        observations: list of (image id, keypoint index); at most one
            observation per image.
        point3d: (3,) world point once triangulated, else None.
        color: (r, g, b) uint8 tuple sampled at triangulation time.
    """

    observations: list = field(default_factory=list)
    point3d: np.ndarray | None = None
    color: tuple | None = None

    def image_ids(self):
        return [obs[0] for obs in self.observations]


@dataclass
class Reconstruction:
    """Incremental SfM state shared by all pipeline stages.

    Attributes:
        intrinsics: Shared camera intrinsics for every frame.
        frames: image id -> RigidPose for registered images.
        tracks: all tracks (triangulated ones have point3d set).
        input_image_ids: every image id given to the pipeline.
        keypoints: image id -> (N, 2) keypoint pixel coordinates.
        bearings: image id -> (N, 3) unit bearings (unprojected keypoints).
        gauge_pair: (id0, id1) whose baseline defines the unit of scale.
    """

    intrinsics: CameraIntrinsics
    frames: dict = field(default_factory=dict)
    tracks: list = field(default_factory=list)
    input_image_ids: list = field(default_factory=list)
    keypoints: dict = field(default_factory=dict)
    bearings: dict = field(default_factory=dict)
    gauge_pair: tuple | None = None

    def registered_ids(self) -> list:
        return sorted(self.frames.keys())

    def points_and_colors(self) -> tuple[np.ndarray, np.ndarray]:
        """Triangulated cloud as parallel (P, 3) float and (P, 3) uint8."""
        pts, cols = [], []
        for tr in self.tracks:
            if tr.point3d is not None:
                pts.append(tr.point3d)
                cols.append(tr.color if tr.color is not None else (200, 200, 200))
        if not pts:
            return np.zeros((0, 3)), np.zeros((0, 3), np.uint8)
        return np.asarray(pts, dtype=np.float64), np.asarray(cols, dtype=np.uint8)

    def track_observers(self) -> list:
        """Per triangulated point, the ids of registered observing frames
        (aligned with points_and_colors order)."""
        out = []
        for tr in self.tracks:
            if tr.point3d is not None:
                out.append([i for i, _ in tr.observations if i in self.frames])
        return out

    def reprojection_errors(self) -> np.ndarray:
        """Pixel errors of every triangulated observation on registered
        frames, in deterministic track order."""
        errs = []
        for tr in self.tracks:
            if tr.point3d is None:
                continue
            for image_id, kp_idx in tr.observations:
                pose = self.frames.get(image_id)
                if pose is None:
                    continue
                uv, valid = project_many(self.intrinsics, pose.transform(tr.point3d)[None])
                if not valid[0]:
                    errs.append(np.inf)
                else:
                    errs.append(
                        float(np.linalg.norm(uv[0] - self.keypoints[image_id][kp_idx]))
                    )
        return np.asarray(errs)


@dataclass(frozen=True)
class ReconstructionStats:
    """Table-style summary of a finished reconstruction."""

    input_images: int
    reconstructed_images: int
    reconstructed_pct: float
    points3d: int
    average_observation: float

    def to_dict(self) -> dict:
        return {
            "input_images": self.input_images,
            "reconstructed_images": self.reconstructed_images,
            "reconstructed_pct": self.reconstructed_pct,
            "points3d": self.points3d,
            "average_observation": self.average_observation,
        }


def compute_stats(recon: Reconstruction) -> ReconstructionStats:
    """Counts mirroring the paper-style evaluation table.

    ``average_observation`` is the per-registered-image mean number of 2D
    observations that belong to triangulated tracks. The percentage is
    truncated (not rounded) to one decimal, matching the reference table's
    headline figure (1481/1483 -> 99.8).
    """
    n_input = len(recon.input_image_ids)
    n_rec = len(recon.frames)
    per_image = {i: 0 for i in recon.frames}
    n_points = 0
    for tr in recon.tracks:
        if tr.point3d is None:
            continue
        n_points += 1
        for image_id, _ in tr.observations:
            if image_id in per_image:
                per_image[image_id] += 1
    if n_rec > 0:
        avg_obs = sum(per_image.values()) / n_rec
        pct = (1000 * n_rec // n_input) / 10.0 if n_input else 0.0
    else:
        avg_obs = 0.0
        pct = 0.0
    return ReconstructionStats(
        input_images=n_input,
        reconstructed_images=n_rec,
        reconstructed_pct=pct,
        points3d=n_points,
        average_observation=avg_obs,
    )
