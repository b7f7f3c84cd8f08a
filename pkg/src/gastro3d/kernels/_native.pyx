# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: initializedcheck=False, language_level=3
"""Compiled twins of the numpy fallback kernels.

Same signatures and the same arithmetic (same windows, weights, and
accumulation order) as ``_fallback``; only the execution strategy differs.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport atan2, cos, exp, floor, sin, sqrt

cnp.import_array()

cdef double TWO_PI = 6.283185307179586476925287


def orientation_histograms(
    double[:, ::1] mag,
    double[:, ::1] ang,
    double[::1] xs,
    double[::1] ys,
    double[::1] sigmas,
):
    cdef Py_ssize_t h = mag.shape[0]
    cdef Py_ssize_t w = mag.shape[1]
    cdef Py_ssize_t n = xs.shape[0]
    out = np.zeros((n, 36), dtype=np.float64)
    cdef double[:, ::1] hist = out
    cdef Py_ssize_t i, x0, x1, y0, y1, xx, yy, b
    cdef double sigma_w, cx, cy, dx, dy, weight, a
    cdef int radius
    for i in range(n):
        sigma_w = 1.5 * sigmas[i]
        radius = <int>floor(3.0 * sigma_w + 0.5)
        cx = xs[i]
        cy = ys[i]
        x0 = <Py_ssize_t>floor(cx) - radius
        x1 = <Py_ssize_t>floor(cx) + radius
        y0 = <Py_ssize_t>floor(cy) - radius
        y1 = <Py_ssize_t>floor(cy) + radius
        if x0 < 1:
            x0 = 1
        if x1 > w - 2:
            x1 = w - 2
        if y0 < 1:
            y0 = 1
        if y1 > h - 2:
            y1 = h - 2
        if x1 < x0 or y1 < y0:
            continue
        for yy in range(y0, y1 + 1):
            dy = yy - cy
            for xx in range(x0, x1 + 1):
                dx = xx - cx
                weight = exp(-(dx * dx + dy * dy) / (2.0 * sigma_w * sigma_w))
                a = ang[yy, xx]
                a = a - TWO_PI * floor(a / TWO_PI)
                b = <Py_ssize_t>floor(a / TWO_PI * 36.0) % 36
                hist[i, b] += mag[yy, xx] * weight
    return out


def descriptors(
    double[:, ::1] mag,
    double[:, ::1] ang,
    double[::1] xs,
    double[::1] ys,
    double[::1] sigmas,
    double[::1] thetas,
):
    cdef Py_ssize_t h = mag.shape[0]
    cdef Py_ssize_t w = mag.shape[1]
    cdef Py_ssize_t n = xs.shape[0]
    cdef int d = 4
    cdef int nbins = 8
    out = np.zeros((n, 128), dtype=np.float64)
    cdef double[:, ::1] desc = out
    cdef Py_ssize_t i, x0, x1, y0, y1, xx, yy
    cdef int radius, r0, c0, o0, dr, dc, do, rr, cc, oo
    cdef double hist_width, cx, cy, cos_t, sin_t, dx, dy, rx, ry
    cdef double rbin, cbin, obin, weight, val, fr, fc, fo, wr, wc, wo, a
    for i in range(n):
        hist_width = 3.0 * sigmas[i]
        radius = <int>floor(hist_width * 1.4142135623730951 * (d + 1) * 0.5 + 0.5)
        cx = xs[i]
        cy = ys[i]
        cos_t = cos(thetas[i])
        sin_t = sin(thetas[i])
        x0 = <Py_ssize_t>floor(cx) - radius
        x1 = <Py_ssize_t>floor(cx) + radius
        y0 = <Py_ssize_t>floor(cy) - radius
        y1 = <Py_ssize_t>floor(cy) + radius
        if x0 < 1:
            x0 = 1
        if x1 > w - 2:
            x1 = w - 2
        if y0 < 1:
            y0 = 1
        if y1 > h - 2:
            y1 = h - 2
        if x1 < x0 or y1 < y0:
            continue
        for yy in range(y0, y1 + 1):
            dy = yy - cy
            for xx in range(x0, x1 + 1):
                dx = xx - cx
                rx = (cos_t * dx + sin_t * dy) / hist_width
                ry = (-sin_t * dx + cos_t * dy) / hist_width
                rbin = ry + d / 2.0 - 0.5
                cbin = rx + d / 2.0 - 0.5
                if rbin <= -1.0 or rbin >= d or cbin <= -1.0 or cbin >= d:
                    continue
                weight = exp(-(rx * rx + ry * ry) / (0.5 * d * d))
                val = mag[yy, xx] * weight
                a = ang[yy, xx] - thetas[i]
                a = a - TWO_PI * floor(a / TWO_PI)
                obin = a / TWO_PI * nbins
                r0 = <int>floor(rbin)
                c0 = <int>floor(cbin)
                o0 = <int>floor(obin)
                fr = rbin - r0
                fc = cbin - c0
                fo = obin - o0
                for dr in range(2):
                    rr = r0 + dr
                    if rr < 0 or rr >= d:
                        continue
                    wr = val * (fr if dr else 1.0 - fr)
                    for dc in range(2):
                        cc = c0 + dc
                        if cc < 0 or cc >= d:
                            continue
                        wc = wr * (fc if dc else 1.0 - fc)
                        for do in range(2):
                            oo = (o0 + do) % nbins
                            wo = wc * (fo if do else 1.0 - fo)
                            desc[i, (rr * d + cc) * nbins + oo] += wo
    return out


cdef inline double _implicit(
    double px, double py, double pz,
    double ir0, double ir1, double ir2,
    double[:, ::1] bump_dirs,
    double[::1] bump_freqs,
    double[::1] bump_phases,
    double[::1] bump_amps,
    Py_ssize_t n_bumps,
) noexcept nogil:
    cdef double rho = sqrt(px * px + py * py + pz * pz)
    if rho < 1e-12:
        rho = 1e-12
    cdef double ux = px / rho
    cdef double uy = py / rho
    cdef double uz = pz / rho
    cdef double s2 = ux * ux * ir0 + uy * uy * ir1 + uz * uz * ir2
    cdef double r_ell = 1.0 / sqrt(s2)
    cdef double bump = 0.0
    cdef Py_ssize_t j
    for j in range(n_bumps):
        bump += bump_amps[j] * sin(
            (ux * bump_dirs[j, 0] + uy * bump_dirs[j, 1] + uz * bump_dirs[j, 2])
            * bump_freqs[j]
            + bump_phases[j]
        )
    return rho - r_ell * (1.0 + bump)


def march_rays(
    double[:, ::1] origins,
    double[:, ::1] dirs,
    radii,
    double[:, ::1] bump_dirs,
    double[::1] bump_freqs,
    double[::1] bump_phases,
    double[::1] bump_amps,
    double t_min,
    double t_max,
    double coarse_step,
    int bisect_iters,
):
    cdef Py_ssize_t n = origins.shape[0]
    cdef Py_ssize_t n_bumps = bump_freqs.shape[0]
    r = np.asarray(radii, dtype=np.float64)
    cdef double ir0 = 1.0 / (r[0] * r[0])
    cdef double ir1 = 1.0 / (r[1] * r[1])
    cdef double ir2 = 1.0 / (r[2] * r[2])
    out = np.full(n, np.nan, dtype=np.float64)
    cdef double[::1] t_out = out
    cdef Py_ssize_t i, k
    cdef int steps = <int>(floor((t_max - t_min) / coarse_step)) + 1
    cdef double ox, oy, oz, dx, dy, dz, t, prev_t, prev_f, f, lo, hi, f_lo, f_mid, mid
    cdef bint found
    with nogil:
        for i in range(n):
            ox = origins[i, 0]
            oy = origins[i, 1]
            oz = origins[i, 2]
            dx = dirs[i, 0]
            dy = dirs[i, 1]
            dz = dirs[i, 2]
            prev_t = t_min
            prev_f = _implicit(
                ox + t_min * dx, oy + t_min * dy, oz + t_min * dz,
                ir0, ir1, ir2, bump_dirs, bump_freqs, bump_phases, bump_amps, n_bumps,
            )
            found = False
            for k in range(1, steps + 1):
                t = t_min + k * coarse_step
                if t > t_max:
                    t = t_max
                f = _implicit(
                    ox + t * dx, oy + t * dy, oz + t * dz,
                    ir0, ir1, ir2, bump_dirs, bump_freqs, bump_phases, bump_amps, n_bumps,
                )
                if (f > 0) != (prev_f > 0) or (f == 0) != (prev_f == 0):
                    found = True
                    break
                prev_t = t
                prev_f = f
                if t >= t_max:
                    break
            if not found:
                continue
            lo = prev_t
            hi = t
            f_lo = prev_f
            for k in range(bisect_iters):
                mid = 0.5 * (lo + hi)
                f_mid = _implicit(
                    ox + mid * dx, oy + mid * dy, oz + mid * dz,
                    ir0, ir1, ir2, bump_dirs, bump_freqs, bump_phases, bump_amps, n_bumps,
                )
                if (f_mid > 0) == (f_lo > 0) and (f_mid == 0) == (f_lo == 0):
                    lo = mid
                    f_lo = f_mid
                else:
                    hi = mid
            t_out[i] = 0.5 * (lo + hi)
    return out
