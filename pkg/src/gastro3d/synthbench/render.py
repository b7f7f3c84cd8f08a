"""Fisheye ray-cast rendering of synthetic cavity scenes.

Per pixel: unproject to a bearing, march the ray to the first surface
crossing (coarse steps + bisection, in the native kernel when available),
shade Lambertian with a camera-colocated inverse-square point light.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..camera import CameraIntrinsics, unproject_many
from ..errors import InvalidInputError
from .scene import SyntheticScene

logger = logging.getLogger(__name__)

AMBIENT = 0.06
LIGHT_GAIN = 0.55
_COARSE_STEP_FRACTION = 0.05
_BISECT_ITERS = 26


@dataclass
class RenderResult:
    images: list          # per frame uint8 (H, W, 3)
    poses: list           # ground-truth RigidPose per frame
    depths: list          # per frame float64 (H, W) range along the ray


def default_intrinsics(width: int = 640, height: int = 480) -> CameraIntrinsics:
    """Wide-angle fisheye covering most of the cavity per view."""
    return CameraIntrinsics(
        fx=0.42 * width, fy=0.42 * width,
        cx=width / 2.0, cy=height / 2.0,
        k1=0.03, k2=-0.005, k3=0.0, k4=0.0,
        width=width, height=height,
    )


def render_frame(scene: SyntheticScene, intr: CameraIntrinsics, pose) -> tuple:
    """One frame: returns (image uint8 (H, W, 3), depth (H, W))."""
    h, w = intr.height, intr.width
    vv, uu = np.mgrid[0:h, 0:w]
    pixels = np.stack([uu.ravel().astype(np.float64), vv.ravel().astype(np.float64)], axis=1)
    bearings_cam = unproject_many(intr, pixels)
    dirs = bearings_cam @ pose.rotation  # R^T @ b per row
    center = pose.center
    origins = np.broadcast_to(center, dirs.shape).copy()

    t_max = 2.0 * scene.surface.bounding_radius() + float(np.linalg.norm(center))
    coarse = _COARSE_STEP_FRACTION * float(scene.surface.radii.min())
    t_hit = kernels.march_rays(
        origins,
        dirs,
        scene.surface.radii,
        scene.surface.bump_dirs,
        scene.surface.bump_freqs,
        scene.surface.bump_phases,
        scene.surface.bump_amps,
        1e-4,
        t_max,
        coarse,
        _BISECT_ITERS,
    )
    hit = np.isfinite(t_hit)
    t_safe = np.where(hit, t_hit, 1.0)
    points = origins + t_safe[:, None] * dirs

    albedo = scene.texture.albedo(points)
    normals_out = scene.surface.outward_normals(points)
    # shading normal faces the cavity interior (toward the camera)
    to_light = -dirs
    cos_term = np.maximum(np.sum(-normals_out * to_light, axis=1), 0.0)
    # the light is colocated with the camera: inverse-square falloff
    falloff = 1.0 / np.maximum(t_safe * t_safe, 1e-6)
    intensity = AMBIENT + LIGHT_GAIN * cos_term * falloff
    rgb = np.clip(albedo * intensity[:, None], 0.0, 1.0)
    rgb[~hit] = 0.0
    image = np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8).reshape(h, w, 3)
    depth = np.where(hit, t_hit, 0.0).reshape(h, w)
    return image, depth


def render_views(scene: SyntheticScene, intr: CameraIntrinsics) -> RenderResult:
    """Render every trajectory pose; validates poses are inside the cavity.

    Raises:
        InvalidInputError: a trajectory pose lies outside the cavity.
    """
    for i, pose in enumerate(scene.trajectory):
        if scene.surface.implicit(pose.center[None])[0] >= 0:
            raise InvalidInputError(f"trajectory pose {i} outside the cavity")
    images, depths = [], []
    for i, pose in enumerate(scene.trajectory):
        image, depth = render_frame(scene, intr, pose)
        images.append(image)
        depths.append(depth)
        logger.debug("rendered frame %d/%d", i + 1, len(scene.trajectory))
    return RenderResult(images=images, poses=list(scene.trajectory), depths=depths)
