"""Point-cloud conditioning before surface reconstruction: downsampling,
statistical outlier removal, normal estimation, camera-based orientation.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..cloud import PointCloud
from ..errors import InvalidInputError

logger = logging.getLogger(__name__)

DEFAULT_TARGET_COUNT = 10_000
NEIGHBOR_FRACTION = 0.1
SIGMA_MULTIPLIER = 2.0
MIN_NORMAL_POINTS = 30


@dataclass(frozen=True)
class FilterParams:
    """Outlier-removal knobs; defaults follow the reference procedure."""

    n: int = DEFAULT_TARGET_COUNT
    neighbor_fraction: float = NEIGHBOR_FRACTION
    sigma_multiplier: float = SIGMA_MULTIPLIER

    def __post_init__(self):
        if self.n < 10:
            raise InvalidInputError("target count n must be >= 10")
        if not (0.0 < self.neighbor_fraction < 1.0):
            raise InvalidInputError("neighbor_fraction must be in (0, 1)")
        if self.sigma_multiplier <= 0:
            raise InvalidInputError("sigma_multiplier must be positive")


@dataclass(frozen=True)
class FilterReport:
    """All intermediates of one outlier-removal pass.

    threshold == global_mean + sigma_multiplier * global_std exactly;
    inlier_count == number of points with mean distance <= threshold.
    """

    mean_dist_per_point: np.ndarray
    global_mean: float
    global_std: float
    threshold: float
    inlier_count: int

    def to_dict(self) -> dict:
        return {
            "global_mean": self.global_mean,
            "global_std": self.global_std,
            "threshold": self.threshold,
            "inlier_count": self.inlier_count,
            "point_count": int(len(self.mean_dist_per_point)),
            "mean_dist_per_point": self.mean_dist_per_point.tolist(),
        }


def downsample(cloud: PointCloud, n: int, seed: int) -> PointCloud:
    """Uniform random subsample of exactly n points (identity if small)."""
    if n < 1:
        raise InvalidInputError("downsample target must be >= 1")
    if len(cloud) <= n:
        return cloud
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(cloud), size=n, replace=False))
    logger.debug("downsampled %d -> %d points", len(cloud), n)
    return cloud.subset(idx)


def neighbor_count(total: int, fraction: float) -> int:
    return int(np.ceil(total * fraction))


def remove_outliers(
    cloud: PointCloud, params: FilterParams = FilterParams()
) -> tuple[PointCloud, FilterReport]:
    """Statistical outlier removal in one pass.

    For each point, the mean Euclidean distance to its ceil(n * 0.1)
    nearest neighbors (self excluded) is computed; points whose mean
    exceeds global_mean + multiplier * global_std (population std) are
    removed. The threshold is computed on the pre-removal set.
    """
    n = len(cloud)
    if n < 10:
        raise InvalidInputError("outlier removal needs >= 10 points")
    k = neighbor_count(n, params.neighbor_fraction)
    if n < k + 1:
        raise InvalidInputError(f"need at least {k + 1} points for {k} neighbors")
    tree = cKDTree(cloud.points)
    dists, _ = tree.query(cloud.points, k=k + 1, workers=-1)
    mean_dists = dists[:, 1:].mean(axis=1)  # drop self (distance 0)
    global_mean = float(mean_dists.mean())
    global_std = float(mean_dists.std())  # population std
    threshold = global_mean + params.sigma_multiplier * global_std
    keep = mean_dists <= threshold
    report = FilterReport(
        mean_dist_per_point=mean_dists,
        global_mean=global_mean,
        global_std=global_std,
        threshold=threshold,
        inlier_count=int(keep.sum()),
    )
    logger.info(
        "outlier removal: %d -> %d points (threshold %.4g)", n, report.inlier_count, threshold
    )
    return cloud.subset(keep), report


def estimate_normals(cloud: PointCloud) -> PointCloud:
    """Per-point normal = smallest-eigenvalue eigenvector of the covariance
    of the ceil(k * 0.1) nearest neighbors (self excluded); sign arbitrary.

    Degenerate neighborhoods (covariance rank < 2) are flagged invalid.
    """
    k_total = len(cloud)
    if k_total < MIN_NORMAL_POINTS:
        raise InvalidInputError(f"normal estimation needs >= {MIN_NORMAL_POINTS} points")
    m = neighbor_count(k_total, NEIGHBOR_FRACTION)
    tree = cKDTree(cloud.points)
    _, idx = tree.query(cloud.points, k=m + 1, workers=-1)
    neighbors = cloud.points[idx[:, 1:]]  # (N, m, 3), self excluded
    centered = neighbors - neighbors.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / m
    eigvals, eigvecs = np.linalg.eigh(cov)
    normals = eigvecs[:, :, 0]  # smallest eigenvalue
    norms = np.linalg.norm(normals, axis=1, keepdims=True)
    normals = normals / np.maximum(norms, 1e-300)
    # rank < 2: the two largest eigenvalues must be meaningfully nonzero
    scale = np.maximum(eigvals[:, 2], 1e-300)
    valid = eigvals[:, 1] / scale > 1e-9
    out = cloud.subset(np.arange(k_total))
    out.normals = normals
    out.normal_valid = valid
    return out


def orient_normals(cloud: PointCloud, frames: dict) -> PointCloud:
    """Flip each normal to face the camera that saw the point.

    The reference camera is the nearest among the point's observers
    (falling back to the nearest registered camera overall), and the
    normal n is flipped so n . (c - p) > 0.
    """
    if cloud.normals is None:
        raise InvalidInputError("orient_normals needs estimated normals")
    if not frames:
        raise InvalidInputError("orient_normals needs >= 1 registered camera")
    cam_ids = sorted(frames)
    centers = np.stack([frames[c].center for c in cam_ids])
    id_to_row = {c: i for i, c in enumerate(cam_ids)}

    pts = cloud.points
    # nearest camera overall (fallback)
    d_all = np.linalg.norm(pts[:, None, :] - centers[None, :, :], axis=2)
    nearest_any = np.argmin(d_all, axis=1)
    ref = centers[nearest_any]
    if cloud.observers is not None:
        for i, obs in enumerate(cloud.observers):
            rows = [id_to_row[c] for c in obs if c in id_to_row]
            if rows:
                ref[i] = centers[rows[np.argmin(d_all[i, rows])]]

    to_cam = ref - pts
    flip = np.sum(cloud.normals * to_cam, axis=1) < 0
    normals = cloud.normals.copy()
    normals[flip] = -normals[flip]
    out = cloud.subset(np.arange(len(cloud)))
    out.normals = normals
    return out
