"""Scale-space keypoint detection and descriptor extraction.

Difference-of-Gaussians extrema over an octave pyramid, iterative subpixel
refinement, low-contrast and edge rejection, dominant-orientation
assignment, and 4x4x8 gradient-orientation histogram descriptors. The
per-keypoint accumulation loops are delegated to ``gastro3d.kernels``.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .. import kernels
from ..errors import InvalidInputError

logger = logging.getLogger(__name__)

MIN_IMAGE_SIDE = 64

SIGMA0 = 1.6
ASSUMED_BLUR = 0.5
SCALES_PER_OCTAVE = 3
MIN_OCTAVE_SIDE = 16
CONTRAST_THRESHOLD = 0.006
EDGE_RATIO = 10.0
MAX_REFINE_STEPS = 5
ORI_PEAK_RATIO = 0.8
MAX_ORIENTATIONS = 2
DESC_CLAMP = 0.2
TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class Keypoint:
    """Detected scale-space keypoint in original image coordinates."""

    x: float
    y: float
    scale: float
    orientation: float
    response: float


def _build_pyramid(image: np.ndarray):
    """Gaussian pyramid: per octave, SCALES_PER_OCTAVE + 3 levels."""
    levels_per_octave = SCALES_PER_OCTAVE + 3
    sigmas = SIGMA0 * 2.0 ** (np.arange(levels_per_octave) / SCALES_PER_OCTAVE)
    base = image.astype(np.float64)
    first_blur = np.sqrt(max(SIGMA0**2 - ASSUMED_BLUR**2, 0.01))
    base = ndimage.gaussian_filter(base, first_blur, mode="nearest")

    octaves = []
    while min(base.shape) >= MIN_OCTAVE_SIDE:
        levels = [base]
        for i in range(1, levels_per_octave):
            inc = np.sqrt(sigmas[i] ** 2 - sigmas[i - 1] ** 2)
            levels.append(ndimage.gaussian_filter(levels[-1], inc, mode="nearest"))
        octaves.append(np.stack(levels))
        base = levels[SCALES_PER_OCTAVE][::2, ::2].copy()
    return octaves, sigmas


def _find_extrema(dog: np.ndarray) -> np.ndarray:
    """Strict 26-neighbor extrema of a DoG stack (L, H, W); returns (n, 3)
    integer (level, y, x) candidates on interior levels/pixels."""
    pre_thresh = 0.5 * CONTRAST_THRESHOLD
    center = dog[1:-1, 1:-1, 1:-1]
    is_max = np.abs(center) > pre_thresh
    is_min = is_max.copy()
    for dl in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dl == 0 and dy == 0 and dx == 0:
                    continue
                nb = dog[
                    1 + dl : dog.shape[0] - 1 + dl,
                    1 + dy : dog.shape[1] - 1 + dy,
                    1 + dx : dog.shape[2] - 1 + dx,
                ]
                is_max &= center > nb
                is_min &= center < nb
                if not (is_max.any() or is_min.any()):
                    return np.empty((0, 3), dtype=np.int64)
    lvl, yy, xx = np.nonzero(is_max | is_min)
    return np.stack([lvl + 1, yy + 1, xx + 1], axis=1)


def _refine(dog: np.ndarray, cand: np.ndarray):
    """Iterative 3D quadratic refinement of integer extrema.

    Returns (positions (n, 3) float [level, y, x], values, ok mask,
    edge-test quantities) after up to MAX_REFINE_STEPS relocations.
    """
    nlvl, h, w = dog.shape
    pos = cand.astype(np.int64).copy()
    alive = np.ones(len(cand), dtype=bool)
    offset = np.zeros((len(cand), 3))
    deriv = np.zeros((len(cand), 3))

    for _ in range(MAX_REFINE_STEPS):
        l, y, x = pos[:, 0], pos[:, 1], pos[:, 2]
        d0 = dog[l, y, x]
        gx = 0.5 * (dog[l, y, x + 1] - dog[l, y, x - 1])
        gy = 0.5 * (dog[l, y + 1, x] - dog[l, y - 1, x])
        gs = 0.5 * (dog[l + 1, y, x] - dog[l - 1, y, x])
        dxx = dog[l, y, x + 1] + dog[l, y, x - 1] - 2 * d0
        dyy = dog[l, y + 1, x] + dog[l, y - 1, x] - 2 * d0
        dss = dog[l + 1, y, x] + dog[l - 1, y, x] - 2 * d0
        dxy = 0.25 * (
            dog[l, y + 1, x + 1] - dog[l, y + 1, x - 1]
            - dog[l, y - 1, x + 1] + dog[l, y - 1, x - 1]
        )
        dxs = 0.25 * (
            dog[l + 1, y, x + 1] - dog[l + 1, y, x - 1]
            - dog[l - 1, y, x + 1] + dog[l - 1, y, x - 1]
        )
        dys = 0.25 * (
            dog[l + 1, y + 1, x] - dog[l + 1, y - 1, x]
            - dog[l - 1, y + 1, x] + dog[l - 1, y - 1, x]
        )
        # closed-form 3x3 solve of H @ off = -g via the adjugate
        a, b, c = dxx, dxy, dxs
        d, e, f = dxy, dyy, dys
        g7, h8, i9 = dxs, dys, dss
        det = a * (e * i9 - f * h8) - b * (d * i9 - f * g7) + c * (d * h8 - e * g7)
        bad = np.abs(det) < 1e-30
        det_safe = np.where(bad, 1.0, det)
        inv00 = (e * i9 - f * h8) / det_safe
        inv01 = (c * h8 - b * i9) / det_safe
        inv02 = (b * f - c * e) / det_safe
        inv10 = (f * g7 - d * i9) / det_safe
        inv11 = (a * i9 - c * g7) / det_safe
        inv12 = (c * d - a * f) / det_safe
        inv20 = (d * h8 - e * g7) / det_safe
        inv21 = (b * g7 - a * h8) / det_safe
        inv22 = (a * e - b * d) / det_safe
        ox = -(inv00 * gx + inv01 * gy + inv02 * gs)
        oy = -(inv10 * gx + inv11 * gy + inv12 * gs)
        os_ = -(inv20 * gx + inv21 * gy + inv22 * gs)
        alive &= ~bad

        offset = np.stack([os_, oy, ox], axis=1)
        deriv = np.stack([gs, gy, gx], axis=1)
        moved = (np.abs(offset) > 0.5).any(axis=1) & alive
        if not moved.any():
            break
        step = np.clip(np.rint(offset), -1, 1).astype(np.int64)
        pos[moved] += step[moved]
        inb = (
            (pos[:, 0] >= 1) & (pos[:, 0] <= nlvl - 2)
            & (pos[:, 1] >= 1) & (pos[:, 1] <= h - 2)
            & (pos[:, 2] >= 1) & (pos[:, 2] <= w - 2)
        )
        alive &= inb
        pos[:, 0] = np.clip(pos[:, 0], 1, nlvl - 2)
        pos[:, 1] = np.clip(pos[:, 1], 1, h - 2)
        pos[:, 2] = np.clip(pos[:, 2], 1, w - 2)

    alive &= (np.abs(offset) <= 0.6).all(axis=1)

    l, y, x = pos[:, 0], pos[:, 1], pos[:, 2]
    d0 = dog[l, y, x]
    value = d0 + 0.5 * np.sum(deriv * offset, axis=1)
    alive &= np.abs(value) >= CONTRAST_THRESHOLD

    # edge rejection on the 2x2 spatial Hessian
    dxx = dog[l, y, x + 1] + dog[l, y, x - 1] - 2 * d0
    dyy = dog[l, y + 1, x] + dog[l, y - 1, x] - 2 * d0
    dxy = 0.25 * (
        dog[l, y + 1, x + 1] - dog[l, y + 1, x - 1]
        - dog[l, y - 1, x + 1] + dog[l, y - 1, x - 1]
    )
    tr = dxx + dyy
    det2 = dxx * dyy - dxy * dxy
    limit = (EDGE_RATIO + 1.0) ** 2 / EDGE_RATIO
    alive &= (det2 > 0) & (tr * tr / np.where(det2 > 0, det2, 1.0) < limit)

    refined = pos.astype(np.float64) + offset  # both ordered (level, y, x)
    return refined, value, alive


def _level_gradients(level: np.ndarray):
    gy, gx = np.gradient(level)
    return np.hypot(gx, gy), np.arctan2(gy, gx)


def _smooth_histogram(hist: np.ndarray, passes: int = 6) -> np.ndarray:
    for _ in range(passes):
        hist = (np.roll(hist, 1, axis=-1) + hist + np.roll(hist, -1, axis=-1)) / 3.0
    return hist


def _orientation_peaks(hist: np.ndarray) -> list:
    """Interpolated peak angles of one smoothed 36-bin histogram."""
    n = len(hist)
    peaks = []
    global_max = hist.max()
    if global_max <= 0:
        return peaks
    order = np.argsort(hist, kind="stable")[::-1]
    for b in order:
        prev_v, next_v = hist[(b - 1) % n], hist[(b + 1) % n]
        v = hist[b]
        if v < ORI_PEAK_RATIO * global_max:
            break
        if v <= prev_v or v <= next_v:
            continue
        denom = prev_v - 2.0 * v + next_v
        shift = 0.5 * (prev_v - next_v) / denom if abs(denom) > 1e-12 else 0.0
        angle = (b + shift + 0.5) * TWO_PI / n
        peaks.append(angle % TWO_PI)
        if len(peaks) >= MAX_ORIENTATIONS:
            break
    return peaks


def detect_and_describe(image: np.ndarray) -> tuple[list, np.ndarray]:
    """Detect SIFT keypoints and compute descriptors.

    Args:
        image: Single-channel raster, at least 64x64; uint8 or float.

    Returns:
        (keypoints, descriptors): index-aligned list of Keypoint and
        (N, 128) float32 array of unit-norm descriptors.

    Raises:
        InvalidInputError: Image smaller than 64x64 or not single-channel.
    """
    img = np.asarray(image)
    if img.ndim != 2:
        raise InvalidInputError("detect_and_describe needs a single-channel image")
    if min(img.shape) < MIN_IMAGE_SIDE:
        raise InvalidInputError(f"image must be at least {MIN_IMAGE_SIDE}px per side")
    if img.dtype == np.uint8:
        img = img.astype(np.float64) / 255.0
    else:
        img = img.astype(np.float64)

    octaves, level_sigmas = _build_pyramid(img)
    height, width = img.shape

    keypoints: list[Keypoint] = []
    desc_blocks: list[np.ndarray] = []

    for oct_idx, gauss in enumerate(octaves):
        dog = gauss[1:] - gauss[:-1]
        cand = _find_extrema(dog)
        if len(cand) == 0:
            continue
        refined, value, ok = _refine(dog, cand)
        refined, value = refined[ok], value[ok]
        if len(refined) == 0:
            continue

        scale_mult = 2.0**oct_idx
        lvl_f = refined[:, 0]
        sigma_oct = SIGMA0 * 2.0 ** (lvl_f / SCALES_PER_OCTAVE)
        x_img = refined[:, 2] * scale_mult
        y_img = refined[:, 1] * scale_mult
        inb = (x_img >= 0) & (x_img < width) & (y_img >= 0) & (y_img < height)

        # group by the integer level whose gradients we use
        lvl_round = np.clip(np.rint(lvl_f).astype(np.int64), 1, gauss.shape[0] - 2)
        for level in np.unique(lvl_round):
            sel = np.nonzero((lvl_round == level) & inb)[0]
            if len(sel) == 0:
                continue
            mag, ang = _level_gradients(gauss[level])
            xs = refined[sel, 2]
            ys = refined[sel, 1]
            sg = sigma_oct[sel]
            hists = kernels.orientation_histograms(mag, ang, xs, ys, sg)
            hists = _smooth_histogram(hists)

            kp_x, kp_y, kp_sigma, kp_theta, kp_resp = [], [], [], [], []
            for j in range(len(sel)):
                for theta in _orientation_peaks(hists[j]):
                    kp_x.append(xs[j])
                    kp_y.append(ys[j])
                    kp_sigma.append(sg[j])
                    kp_theta.append(theta)
                    kp_resp.append(abs(value[sel[j]]))
            if not kp_x:
                continue
            raw = kernels.descriptors(
                mag, ang,
                np.asarray(kp_x), np.asarray(kp_y),
                np.asarray(kp_sigma), np.asarray(kp_theta),
            )
            norms = np.linalg.norm(raw, axis=1, keepdims=True)
            raw = raw / np.maximum(norms, 1e-12)
            raw = np.minimum(raw, DESC_CLAMP)
            norms = np.linalg.norm(raw, axis=1, keepdims=True)
            raw = raw / np.maximum(norms, 1e-12)
            nonzero = norms[:, 0] > 1e-12

            for j in np.nonzero(nonzero)[0]:
                keypoints.append(
                    Keypoint(
                        x=float(kp_x[j] * scale_mult),
                        y=float(kp_y[j] * scale_mult),
                        scale=float(kp_sigma[j] * scale_mult),
                        orientation=float(kp_theta[j]),
                        response=float(kp_resp[j]),
                    )
                )
            desc_blocks.append(raw[nonzero].astype(np.float32))

    if desc_blocks:
        descriptors = np.concatenate(desc_blocks, axis=0)
    else:
        descriptors = np.zeros((0, 128), dtype=np.float32)
    logger.debug("SIFT: %d keypoints on %dx%d image", len(keypoints), width, height)
    return keypoints, descriptors


def keypoint_coords(keypoints: list) -> np.ndarray:
    """(N, 2) array of keypoint pixel positions."""
    if not keypoints:
        return np.zeros((0, 2))
    return np.array([[k.x, k.y] for k in keypoints], dtype=np.float64)
