"""Fisheye camera model: projection, unprojection, and image undistortion.

The radial model is the equidistant polynomial family with four
coefficients: ``r(theta) = theta * (1 + k1 t^2 + k2 t^4 + k3 t^6 + k4 t^8)``
where ``theta`` is the incidence angle of the ray and ``r`` is the radial
image coordinate in normalized (focal = 1) units. Incidence angles up to
THETA_MAX are considered projectable, which covers ultra-wide lenses.
"""

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, NumericalError, OutOfModelError

THETA_MAX = np.deg2rad(115.0)

_NEWTON_MAX_ITERS = 50
_NEWTON_TOL = 1e-14


@dataclass(frozen=True)
class CameraIntrinsics:
    """Fisheye intrinsics: focal lengths, principal point, radial distortion.

    Attributes:
        fx, fy: Focal lengths in pixels.
        cx, cy: Principal point in pixels.
        k1..k4: Radial distortion coefficients (dimensionless).
        width, height: Image size in pixels.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    k4: float = 0.0
    width: int = 0
    height: int = 0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInputError("focal lengths must be positive")
        if not (self.width > 0 and self.height > 0):
            raise InvalidInputError("image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidInputError("principal point must lie inside the image")

    @property
    def distortion(self) -> np.ndarray:
        return np.array([self.k1, self.k2, self.k3, self.k4])

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: (int(v) if k in ("width", "height") else float(v)) for k, v in d.items()}

    @classmethod
    def from_dict(cls, data: dict) -> "CameraIntrinsics":
        return cls(**data)

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load_json(cls, path) -> "CameraIntrinsics":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _radial(theta: np.ndarray, k: np.ndarray) -> np.ndarray:
    t2 = theta * theta
    return theta * (1.0 + t2 * (k[0] + t2 * (k[1] + t2 * (k[2] + t2 * k[3]))))


def _radial_deriv(theta: np.ndarray, k: np.ndarray) -> np.ndarray:
    t2 = theta * theta
    return 1.0 + t2 * (3.0 * k[0] + t2 * (5.0 * k[1] + t2 * (7.0 * k[2] + t2 * 9.0 * k[3])))


def project(intr: CameraIntrinsics, point: np.ndarray) -> np.ndarray:
    """Project a single camera-frame point to pixel coordinates.

    Raises:
        InvalidInputError: The point has (near) zero norm.
        OutOfModelError: The incidence angle is >= THETA_MAX.
    """
    p = np.asarray(point, dtype=np.float64).reshape(3)
    norm = np.linalg.norm(p)
    if norm < 1e-12:
        raise InvalidInputError("cannot project a zero-norm point")
    s = np.hypot(p[0], p[1])
    theta = np.arctan2(s, p[2])
    if theta >= THETA_MAX:
        raise OutOfModelError(f"incidence angle {np.degrees(theta):.1f} deg outside model")
    r = _radial(theta, intr.distortion)
    if s < 1e-12:
        cos_phi, sin_phi = 1.0, 0.0
    else:
        cos_phi, sin_phi = p[0] / s, p[1] / s
    return np.array([intr.cx + intr.fx * r * cos_phi, intr.cy + intr.fy * r * sin_phi])


def project_many(intr: CameraIntrinsics, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection with a validity mask instead of exceptions.

    Args:
        points: (N, 3) camera-frame points.

    Returns:
        (uv, valid): (N, 2) pixel coordinates (NaN where invalid) and a
        boolean mask, False for zero-norm points or incidence >= THETA_MAX.
    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    s = np.hypot(p[:, 0], p[:, 1])
    theta = np.arctan2(s, p[:, 2])
    norms = np.linalg.norm(p, axis=1)
    valid = (norms > 1e-12) & (theta < THETA_MAX)
    r = _radial(theta, intr.distortion)
    with np.errstate(invalid="ignore", divide="ignore"):
        inv_s = np.where(s > 1e-12, 1.0 / np.maximum(s, 1e-300), 0.0)
    cos_phi = np.where(s > 1e-12, p[:, 0] * inv_s, 1.0)
    sin_phi = np.where(s > 1e-12, p[:, 1] * inv_s, 0.0)
    uv = np.stack(
        [intr.cx + intr.fx * r * cos_phi, intr.cy + intr.fy * r * sin_phi], axis=1
    )
    uv[~valid] = np.nan
    return uv, valid


def unproject(intr: CameraIntrinsics, pixel: np.ndarray) -> np.ndarray:
    """Invert the fisheye model: pixel -> unit bearing vector.

    Solves ``r(theta) = r_obs`` by Newton iteration started at
    ``theta0 = r_obs`` (exact for zero distortion).

    Raises:
        NumericalError: Newton did not converge within 50 iterations.
    """
    bearing = unproject_many(intr, np.asarray(pixel, dtype=np.float64).reshape(1, 2))
    return bearing[0]


def unproject_many(intr: CameraIntrinsics, pixels: np.ndarray) -> np.ndarray:
    """Vectorized :func:`unproject`; returns (N, 3) unit bearings."""
    px = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    if not np.all(np.isfinite(px)):
        raise InvalidInputError("pixels must be finite")
    mx = (px[:, 0] - intr.cx) / intr.fx
    my = (px[:, 1] - intr.cy) / intr.fy
    r_obs = np.hypot(mx, my)
    k = intr.distortion
    theta = r_obs.copy()
    converged = r_obs < 1e-14  # principal point maps to the optical axis
    for _ in range(_NEWTON_MAX_ITERS):
        if np.all(converged):
            break
        f = _radial(theta, k) - r_obs
        df = _radial_deriv(theta, k)
        step = np.where(converged, 0.0, f / df)
        theta = theta - step
        converged = converged | (np.abs(step) < _NEWTON_TOL)
    if not np.all(converged):
        raise NumericalError("fisheye unprojection Newton did not converge")
    with np.errstate(invalid="ignore", divide="ignore"):
        inv_r = np.where(r_obs > 1e-14, 1.0 / np.maximum(r_obs, 1e-300), 0.0)
    cos_phi = np.where(r_obs > 1e-14, mx * inv_r, 1.0)
    sin_phi = np.where(r_obs > 1e-14, my * inv_r, 0.0)
    sin_t, cos_t = np.sin(theta), np.cos(theta)
    return np.stack([sin_t * cos_phi, sin_t * sin_phi, cos_t], axis=1)


def project_jacobian_point(intr: CameraIntrinsics, points: np.ndarray) -> np.ndarray:
    """d(pixel)/d(camera-frame point) for each point; shape (N, 2, 3).

    Points too close to the optical axis fall back to the pinhole limit,
    which is the correct analytic limit of the fisheye model.
    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = p.shape[0]
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    s2 = x * x + y * y
    s = np.sqrt(s2)
    rho2 = s2 + z * z
    k = intr.distortion
    jac = np.empty((n, 2, 3))

    on_axis = s < 1e-12
    safe_s = np.where(on_axis, 1.0, s)

    theta = np.arctan2(s, z)
    r = _radial(theta, k)
    dr = _radial_deriv(theta, k)

    # dtheta/dp and dphi/dp
    dth_dx = x * z / (safe_s * rho2)
    dth_dy = y * z / (safe_s * rho2)
    dth_dz = -s / rho2
    dph_dx = -y / np.where(on_axis, 1.0, s2)
    dph_dy = x / np.where(on_axis, 1.0, s2)

    cos_phi = x / safe_s
    sin_phi = y / safe_s

    jac[:, 0, 0] = intr.fx * (dr * cos_phi * dth_dx - r * sin_phi * dph_dx)
    jac[:, 0, 1] = intr.fx * (dr * cos_phi * dth_dy - r * sin_phi * dph_dy)
    jac[:, 0, 2] = intr.fx * dr * cos_phi * dth_dz
    jac[:, 1, 0] = intr.fy * (dr * sin_phi * dth_dx + r * cos_phi * dph_dx)
    jac[:, 1, 1] = intr.fy * (dr * sin_phi * dth_dy + r * cos_phi * dph_dy)
    jac[:, 1, 2] = intr.fy * dr * sin_phi * dth_dz

    if np.any(on_axis):
        zz = z[on_axis]
        jac[on_axis] = 0.0
        jac[on_axis, 0, 0] = intr.fx / zz
        jac[on_axis, 0, 2] = -intr.fx * x[on_axis] / (zz * zz)
        jac[on_axis, 1, 1] = intr.fy / zz
        jac[on_axis, 1, 2] = -intr.fy * y[on_axis] / (zz * zz)
    return jac


def project_jacobian_intrinsics(intr: CameraIntrinsics, points: np.ndarray) -> np.ndarray:
    """d(pixel)/d(fx, fy, cx, cy, k1, k2, k3, k4); shape (N, 2, 8)."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = p.shape[0]
    x, y = p[:, 0], p[:, 1]
    s = np.hypot(x, y)
    theta = np.arctan2(s, p[:, 2])
    r = _radial(theta, intr.distortion)
    safe_s = np.where(s < 1e-12, 1.0, s)
    cos_phi = np.where(s < 1e-12, 1.0, x / safe_s)
    sin_phi = np.where(s < 1e-12, 0.0, y / safe_s)

    jac = np.zeros((n, 2, 8))
    jac[:, 0, 0] = r * cos_phi
    jac[:, 1, 1] = r * sin_phi
    jac[:, 0, 2] = 1.0
    jac[:, 1, 3] = 1.0
    for i in range(4):
        dtheta_pow = theta ** (3 + 2 * i)
        jac[:, 0, 4 + i] = intr.fx * cos_phi * dtheta_pow
        jac[:, 1, 4 + i] = intr.fy * sin_phi * dtheta_pow
    return jac


def bilinear_sample(image: np.ndarray, uv: np.ndarray, fill: float = 0.0) -> np.ndarray:
    """Bilinear sampling of (H, W) or (H, W, C) images at pixel coords.

    Out-of-bounds samples are set to ``fill``. Pixel centers sit at integer
    coordinates.
    """
    img = np.asarray(image)
    h, w = img.shape[:2]
    u = uv[:, 0]
    v = uv[:, 1]
    inside = (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
    uc = np.clip(u, 0, w - 1)
    vc = np.clip(v, 0, h - 1)
    u0 = np.floor(uc).astype(np.int64)
    v0 = np.floor(vc).astype(np.int64)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = (uc - u0).astype(np.float64)
    fv = (vc - v0).astype(np.float64)
    if img.ndim == 3:
        fu = fu[:, None]
        fv = fv[:, None]
    vals = (
        img[v0, u0] * (1 - fu) * (1 - fv)
        + img[v0, u1] * fu * (1 - fv)
        + img[v1, u0] * (1 - fu) * fv
        + img[v1, u1] * fu * fv
    )
    if img.ndim == 3:
        vals = np.where(inside[:, None], vals, fill)
    else:
        vals = np.where(inside, vals, fill)
    return vals


def undistort(image: np.ndarray, intr: CameraIntrinsics, target_focal: float) -> np.ndarray:
    """Resample a fisheye image onto an ideal pinhole camera.

    Each output pixel (u, v) is interpreted as a pinhole ray with focal
    ``target_focal`` and the same principal point, projected back through
    the fisheye model, and sampled bilinearly from the source image.
    Pixels falling outside the source (or outside the model) become 0.
    """
    if target_focal <= 0:
        raise InvalidInputError("target_focal must be positive")
    img = np.asarray(image)
    h, w = img.shape[:2]
    vv, uu = np.mgrid[0:h, 0:w]
    rays = np.stack(
        [
            (uu.ravel() - intr.cx) / target_focal,
            (vv.ravel() - intr.cy) / target_focal,
            np.ones(h * w),
        ],
        axis=1,
    )
    uv, valid = project_many(intr, rays)
    uv[~valid] = -1e9  # forces fill value in sampling
    flat = bilinear_sample(img.astype(np.float64), uv, fill=0.0)
    out = flat.reshape(img.shape)
    if np.issubdtype(img.dtype, np.integer):
        out = np.clip(np.rint(out), 0, np.iinfo(img.dtype).max).astype(img.dtype)
    return out
