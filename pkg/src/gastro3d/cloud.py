"""Point cloud container shared by the SfM export and meshing stages."""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError


@dataclass
class PointCloud:
    """Parallel per-point arrays; optional attributes may be None.

    Attributes:
        points: (N, 3) float positions.
        colors: (N, 3) uint8, optional.
        normals: (N, 3) unit vectors, optional.
        normal_valid: (N,) bool, optional; False marks degenerate normals.
        observers: per-point list of observing camera ids, optional.
    """

    points: np.ndarray
    colors: np.ndarray | None = None
    normals: np.ndarray | None = None
    normal_valid: np.ndarray | None = None
    observers: list | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        n = len(self.points)
        if self.colors is not None:
            self.colors = np.asarray(self.colors).reshape(-1, 3)
            if len(self.colors) != n:
                raise InvalidInputError("colors length mismatch")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(self.normals) != n:
                raise InvalidInputError("normals length mismatch")
        if self.normal_valid is not None:
            self.normal_valid = np.asarray(self.normal_valid, dtype=bool).reshape(-1)
            if len(self.normal_valid) != n:
                raise InvalidInputError("normal_valid length mismatch")
        if self.observers is not None and len(self.observers) != n:
            raise InvalidInputError("observers length mismatch")

    def __len__(self):
        return len(self.points)

    def subset(self, selector) -> "PointCloud":
        """New cloud with every parallel attribute sliced identically."""
        idx = np.asarray(selector)
        if idx.dtype == bool:
            idx = np.nonzero(idx)[0]
        return PointCloud(
            points=self.points[idx],
            colors=self.colors[idx] if self.colors is not None else None,
            normals=self.normals[idx] if self.normals is not None else None,
            normal_valid=self.normal_valid[idx] if self.normal_valid is not None else None,
            observers=[self.observers[i] for i in idx] if self.observers is not None else None,
        )


def cloud_from_reconstruction(recon) -> PointCloud:
    """Triangulated SfM points with colors and observing-camera ids."""
    points, colors = recon.points_and_colors()
    observers = recon.track_observers()
    return PointCloud(points=points, colors=colors, observers=observers)
