from .filters import (
    FilterParams,
    FilterReport,
    downsample,
    estimate_normals,
    neighbor_count,
    orient_normals,
    remove_outliers,
)
from .poisson import poisson_reconstruct

__all__ = [
    "FilterParams",
    "FilterReport",
    "downsample",
    "estimate_normals",
    "neighbor_count",
    "orient_normals",
    "poisson_reconstruct",
    "remove_outliers",
]
