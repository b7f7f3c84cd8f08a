"""Pure-numpy reference implementations of the hot kernels.

The native Cython module (``_native``) mirrors these signatures exactly;
``gastro3d.kernels`` selects one implementation at import time. Keep the
algorithms here byte-for-byte equivalent in behavior (same windows, same
weights); only the execution strategy may differ.
"""

import numpy as np

TWO_PI = 2.0 * np.pi


def orientation_histograms(
    mag: np.ndarray,
    ang: np.ndarray,
    xs: np.ndarray,
    ys: np.ndarray,
    sigmas: np.ndarray,
) -> np.ndarray:
    """36-bin gradient-orientation histograms around keypoints.

    Args:
        mag, ang: Gradient magnitude/angle images of one pyramid level.
        xs, ys: Keypoint coordinates in level pixels (subpixel).
        sigmas: Keypoint scales in level pixels.

    Returns:
        (N, 36) float64 histogram block, unsmoothed.
    """
    h, w = mag.shape
    n = len(xs)
    hist = np.zeros((n, 36))
    for i in range(n):
        sigma_w = 1.5 * sigmas[i]
        radius = int(round(3.0 * sigma_w))
        cx, cy = xs[i], ys[i]
        x0 = max(1, int(np.floor(cx)) - radius)
        x1 = min(w - 2, int(np.floor(cx)) + radius)
        y0 = max(1, int(np.floor(cy)) - radius)
        y1 = min(h - 2, int(np.floor(cy)) + radius)
        if x1 < x0 or y1 < y0:
            continue
        yy, xx = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
        dx = xx - cx
        dy = yy - cy
        weight = np.exp(-(dx * dx + dy * dy) / (2.0 * sigma_w * sigma_w))
        m = mag[y0 : y1 + 1, x0 : x1 + 1] * weight
        a = ang[y0 : y1 + 1, x0 : x1 + 1]
        bins = np.floor((a % TWO_PI) / TWO_PI * 36.0).astype(np.int64) % 36
        np.add.at(hist[i], bins.ravel(), m.ravel())
    return hist


def descriptors(
    mag: np.ndarray,
    ang: np.ndarray,
    xs: np.ndarray,
    ys: np.ndarray,
    sigmas: np.ndarray,
    thetas: np.ndarray,
) -> np.ndarray:
    """Raw (unnormalized) 4x4x8 SIFT descriptors.

    Trilinear accumulation of rotated gradient samples into the spatial and
    orientation bins, Gaussian-weighted by distance to the keypoint.

    Returns:
        (N, 128) float64 raw histograms.
    """
    h, w = mag.shape
    n = len(xs)
    d = 4  # spatial bins per side
    nbins = 8
    out = np.zeros((n, d, d, nbins))
    for i in range(n):
        hist_width = 3.0 * sigmas[i]  # one spatial bin in pixels
        radius = int(round(hist_width * np.sqrt(2.0) * (d + 1) * 0.5))
        cx, cy = xs[i], ys[i]
        cos_t, sin_t = np.cos(thetas[i]), np.sin(thetas[i])
        x0 = max(1, int(np.floor(cx)) - radius)
        x1 = min(w - 2, int(np.floor(cx)) + radius)
        y0 = max(1, int(np.floor(cy)) - radius)
        y1 = min(h - 2, int(np.floor(cy)) + radius)
        if x1 < x0 or y1 < y0:
            continue
        yy, xx = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
        dx = (xx - cx).ravel()
        dy = (yy - cy).ravel()
        # rotate into the keypoint frame, in units of spatial bins
        rx = (cos_t * dx + sin_t * dy) / hist_width
        ry = (-sin_t * dx + cos_t * dy) / hist_width
        rbin = ry + d / 2.0 - 0.5
        cbin = rx + d / 2.0 - 0.5
        keep = (rbin > -1.0) & (rbin < d) & (cbin > -1.0) & (cbin < d)
        if not np.any(keep):
            continue
        rbin, cbin = rbin[keep], cbin[keep]
        rx, ry = rx[keep], ry[keep]
        m = mag[y0 : y1 + 1, x0 : x1 + 1].ravel()[keep]
        a = ang[y0 : y1 + 1, x0 : x1 + 1].ravel()[keep]
        weight = np.exp(-(rx * rx + ry * ry) / (0.5 * d * d))
        val = m * weight
        obin = ((a - thetas[i]) % TWO_PI) / TWO_PI * nbins

        r0 = np.floor(rbin).astype(np.int64)
        c0 = np.floor(cbin).astype(np.int64)
        o0 = np.floor(obin).astype(np.int64)
        fr = rbin - r0
        fc = cbin - c0
        fo = obin - o0

        flat = out[i].ravel()
        for dr in (0, 1):
            wr = val * (fr if dr else (1.0 - fr))
            rr = r0 + dr
            ok_r = (rr >= 0) & (rr < d)
            for dc in (0, 1):
                wc = wr * (fc if dc else (1.0 - fc))
                cc = c0 + dc
                ok_c = ok_r & (cc >= 0) & (cc < d)
                if not np.any(ok_c):
                    continue
                for do in (0, 1):
                    wo = wc * (fo if do else (1.0 - fo))
                    oo = (o0 + do) % nbins
                    idx = (rr * d + cc) * nbins + oo
                    np.add.at(flat, idx[ok_c], wo[ok_c])
    return out.reshape(n, d * d * nbins)


def march_rays(
    origins: np.ndarray,
    dirs: np.ndarray,
    radii: np.ndarray,
    bump_dirs: np.ndarray,
    bump_freqs: np.ndarray,
    bump_phases: np.ndarray,
    bump_amps: np.ndarray,
    t_min: float,
    t_max: float,
    coarse_step: float,
    bisect_iters: int,
) -> np.ndarray:
    """First crossing of the implicit cavity surface along each ray.

    The surface is ``|p| = r_ell(p_hat) * (1 + bump(p_hat))`` where
    ``r_ell`` is the ellipsoid radius along the unit direction and ``bump``
    a band-limited sum of sinusoids of that direction. Returns per-ray hit
    parameter t, or NaN where no sign change was found in [t_min, t_max].
    """

    def implicit(points):
        rho = np.linalg.norm(points, axis=-1)
        rho_safe = np.maximum(rho, 1e-12)
        unit = points / rho_safe[..., None]
        scaled = unit / radii
        r_ell = 1.0 / np.sqrt(np.sum(scaled * scaled, axis=-1))
        phase = unit @ bump_dirs.T * bump_freqs + bump_phases
        bump = np.sin(phase) @ bump_amps
        return rho - r_ell * (1.0 + bump)

    n = len(origins)
    t_lo = np.full(n, np.nan)
    t_hi = np.full(n, np.nan)

    # coarse marching with active-ray compaction: rays drop out of the
    # working set as soon as their bracketing interval is found
    active = np.arange(n)
    prev_t = np.full(n, t_min)
    prev_f = implicit(origins + t_min * dirs)
    steps = int(np.ceil((t_max - t_min) / coarse_step))
    for k in range(1, steps + 1):
        t = min(t_min + k * coarse_step, t_max)
        f = implicit(origins[active] + t * dirs[active])
        crossing = np.sign(f) != np.sign(prev_f[active])
        if np.any(crossing):
            hit_rows = active[crossing]
            t_lo[hit_rows] = prev_t[hit_rows]
            t_hi[hit_rows] = t
            active = active[~crossing]
            if len(active) == 0:
                break
        prev_t[active] = t
        prev_f[active] = f[~crossing] if np.any(crossing) else f

    found = np.isfinite(t_lo)
    t_out = np.full(n, np.nan)
    if np.any(found):
        lo = t_lo[found]
        hi = t_hi[found]
        o = origins[found]
        v = dirs[found]
        f_lo = implicit(o + lo[:, None] * v)
        for _ in range(bisect_iters):
            mid = 0.5 * (lo + hi)
            f_mid = implicit(o + mid[:, None] * v)
            go_right = np.sign(f_mid) == np.sign(f_lo)
            lo = np.where(go_right, mid, lo)
            f_lo = np.where(go_right, f_mid, f_lo)
            hi = np.where(go_right, hi, mid)
        t_out[found] = 0.5 * (lo + hi)
    return t_out
