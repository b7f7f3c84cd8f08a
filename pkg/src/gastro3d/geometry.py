"""Rigid transforms and rotation parameterizations.

Convention used throughout the package: a pose maps world coordinates to
camera coordinates, ``x_cam = R @ x_world + t``, and the camera looks along
+z in its own frame.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

_ORTHO_TOL = 1e-9


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix: skew(v) @ u == cross(v, u)."""
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def skew_many(vectors: np.ndarray) -> np.ndarray:
    """(N, 3) -> (N, 3, 3) stack of cross-product matrices."""
    n = vectors.shape[0]
    out = np.zeros((n, 3, 3))
    x, y, z = vectors[:, 0], vectors[:, 1], vectors[:, 2]
    out[:, 0, 1] = -z
    out[:, 0, 2] = y
    out[:, 1, 0] = z
    out[:, 1, 2] = -x
    out[:, 2, 0] = -y
    out[:, 2, 1] = x
    return out


def exp_so3(omega: np.ndarray) -> np.ndarray:
    """Rodrigues exponential map from an axis-angle 3-vector to a rotation."""
    omega = np.asarray(omega, dtype=np.float64)
    angle = np.linalg.norm(omega)
    if angle < 1e-12:
        # second-order series keeps the map smooth through zero
        k = skew(omega)
        return np.eye(3) + k + 0.5 * (k @ k)
    axis = omega / angle
    k = skew(axis)
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def log_so3(rotation: np.ndarray) -> np.ndarray:
    """Inverse of :func:`exp_so3`; returns the axis-angle vector."""
    cos_angle = np.clip((np.trace(rotation) - 1.0) / 2.0, -1.0, 1.0)
    angle = np.arccos(cos_angle)
    if angle < 1e-12:
        return np.array(
            [
                rotation[2, 1] - rotation[1, 2],
                rotation[0, 2] - rotation[2, 0],
                rotation[1, 0] - rotation[0, 1],
            ]
        ) / 2.0
    if angle > np.pi - 1e-6:
        # near pi the standard formula is ill-conditioned; use
        # (R + I)/2 ~= axis axis^T to recover the axis
        m = (rotation + np.eye(3)) / 2.0
        i = int(np.argmax(np.diag(m)))
        axis = m[:, i] / np.sqrt(max(m[i, i], 1e-300))
        axis = axis / np.linalg.norm(axis)
        return axis * angle
    factor = angle / (2.0 * np.sin(angle))
    return factor * np.array(
        [
            rotation[2, 1] - rotation[1, 2],
            rotation[0, 2] - rotation[2, 0],
            rotation[1, 0] - rotation[0, 1],
        ]
    )


def rotation_angle_deg(r_a: np.ndarray, r_b: np.ndarray) -> float:
    """Geodesic angle between two rotations, in degrees.

    Uses atan2 of the skew norm against the trace, which stays fully
    precise for near-identity differences (arccos loses ~8 digits there).
    """
    d = r_a.T @ r_b
    skew_vec = 0.5 * np.array([d[2, 1] - d[1, 2], d[0, 2] - d[2, 0], d[1, 0] - d[0, 1]])
    sin_angle = np.linalg.norm(skew_vec)
    cos_angle = (np.trace(d) - 1.0) / 2.0
    return float(np.degrees(np.arctan2(sin_angle, cos_angle)))


def orthonormalize(rotation: np.ndarray) -> np.ndarray:
    """Project a near-rotation matrix onto SO(3) via SVD."""
    u, _, vt = np.linalg.svd(rotation)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r


def quat_from_rotation(rotation: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) for a rotation matrix."""
    r = rotation
    trace = np.trace(r)
    if trace > 0:
        s = np.sqrt(trace + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        )
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        q = np.array(
            [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
        )
    elif r[1, 1] > r[2, 2]:
        s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
        q = np.array(
            [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
        q = np.array(
            [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
        )
    q = q / np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


def rotation_from_quat(q: np.ndarray) -> np.ndarray:
    """Rotation matrix for a (w, x, y, z) quaternion (normalized first)."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


@dataclass(frozen=True)
class RigidPose:
    """World-to-camera rigid transform.

    Attributes:
        rotation: (3, 3) orthonormal matrix with det +1.
        translation: (3,) vector; ``x_cam = rotation @ x_world + translation``.
    """

    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-8:
            raise InvalidInputError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-8:
            raise InvalidInputError("rotation must have det +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidPose":
        return cls(np.eye(3), np.zeros(3))

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Map world points (..., 3) into the camera frame."""
        return np.asarray(points) @ self.rotation.T + self.translation

    def inverse(self) -> "RigidPose":
        return RigidPose(self.rotation.T, -self.rotation.T @ self.translation)

    def compose(self, other: "RigidPose") -> "RigidPose":
        """Pose equivalent to applying ``other`` first, then ``self``."""
        return RigidPose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )


def look_at_pose(center: np.ndarray, target: np.ndarray, up_hint: np.ndarray) -> RigidPose:
    """Camera pose at ``center`` with +z toward ``target``.

    Args:
        center: Camera position in world coordinates.
        target: World point the optical axis passes through.
        up_hint: Approximate world up direction; must not be parallel to
            the viewing direction.
    """
    center = np.asarray(center, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - center
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise InvalidInputError("look_at target coincides with camera center")
    forward = forward / norm
    right = np.cross(forward, up_hint)
    norm = np.linalg.norm(right)
    if norm < 1e-9:
        raise InvalidInputError("up_hint is parallel to the viewing direction")
    right = right / norm
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward], axis=0)
    return RigidPose(rotation, -rotation @ center)
