"""Axis-aligned BVH over triangles with batched nearest-hit queries.

Traversal processes whole ray subsets per node (vectorized slab and
Moller-Trumbore tests), which keeps Python overhead proportional to the
number of visited nodes rather than rays.
"""

import numpy as np

_LEAF_SIZE = 8
_EPS = 1e-12


class TriangleBVH:
    """Median-split BVH; build once, query many."""

    def __init__(self, vertices: np.ndarray, triangles: np.ndarray):
        self.tri_verts = np.asarray(vertices, dtype=np.float64)[np.asarray(triangles)]
        n = len(self.tri_verts)
        centroids = self.tri_verts.mean(axis=1)
        tri_min = self.tri_verts.min(axis=1)
        tri_max = self.tri_verts.max(axis=1)

        self.order = np.arange(n)
        node_min, node_max = [], []
        node_left, node_right = [], []
        node_start, node_count = [], []

        def build(start, end):
            idx = len(node_min)
            sel = self.order[start:end]
            node_min.append(tri_min[sel].min(axis=0))
            node_max.append(tri_max[sel].max(axis=0))
            node_left.append(-1)
            node_right.append(-1)
            node_start.append(start)
            node_count.append(end - start)
            if end - start <= _LEAF_SIZE:
                return idx
            cent = centroids[sel]
            axis = int(np.argmax(cent.max(axis=0) - cent.min(axis=0)))
            local = np.argsort(cent[:, axis], kind="stable")
            self.order[start:end] = sel[local]
            mid = start + (end - start) // 2
            node_left[idx] = build(start, mid)
            node_right[idx] = build(mid, end)
            node_count[idx] = 0
            return idx

        build(0, n)
        self.node_min = np.asarray(node_min)
        self.node_max = np.asarray(node_max)
        self.node_left = np.asarray(node_left)
        self.node_right = np.asarray(node_right)
        self.node_start = np.asarray(node_start)
        self.node_count = np.asarray(node_count)

    def _slab_hits(self, node, origins, inv_dirs, t_best):
        lo = (self.node_min[node] - origins) * inv_dirs
        hi = (self.node_max[node] - origins) * inv_dirs
        t_near = np.minimum(lo, hi).max(axis=1)
        t_far = np.maximum(lo, hi).min(axis=1)
        return (t_far >= np.maximum(t_near, 0.0)) & (t_near <= t_best)

    def nearest_hit(
        self,
        origins: np.ndarray,
        dirs: np.ndarray,
        t_max: np.ndarray,
        exclude: np.ndarray | None = None,
    ) -> tuple[np.ndarray, np.ndarray]:
        """First intersection along each ray.

        Args:
            origins, dirs: (M, 3) rays (dirs need not be unit length; t is
                expressed in units of |dir|).
            t_max: (M,) upper bound per ray.
            exclude: optional (M,) triangle index ignored for that ray.

        Returns:
            (t_hit, tri_idx): hit parameter (inf if none) and triangle
            index (-1 if none).
        """
        m = len(origins)
        with np.errstate(divide="ignore"):
            inv_dirs = 1.0 / np.where(np.abs(dirs) < _EPS, np.copysign(_EPS, dirs), dirs)
        best_t = np.asarray(t_max, dtype=np.float64).copy()
        best_tri = np.full(m, -1, dtype=np.int64)
        all_rays = np.arange(m)
        stack = [(0, all_rays)]
        while stack:
            node, rays = stack.pop()
            if len(rays) == 0:
                continue
            mask = self._slab_hits(node, origins[rays], inv_dirs[rays], best_t[rays])
            rays = rays[mask]
            if len(rays) == 0:
                continue
            if self.node_count[node] > 0:
                start = self.node_start[node]
                tris = self.order[start : start + self.node_count[node]]
                self._leaf_intersect(tris, rays, origins, dirs, best_t, best_tri, exclude)
            else:
                stack.append((self.node_left[node], rays))
                stack.append((self.node_right[node], rays))
        best_t[best_tri < 0] = np.inf
        return best_t, best_tri

    def _leaf_intersect(self, tris, rays, origins, dirs, best_t, best_tri, exclude):
        v = self.tri_verts[tris]  # (T, 3, 3)
        e1 = v[:, 1] - v[:, 0]
        e2 = v[:, 2] - v[:, 0]
        o = origins[rays][:, None, :]  # (R, 1, 3)
        d = dirs[rays][:, None, :]
        pvec = np.cross(d, e2[None, :, :])
        det = np.sum(e1[None] * pvec, axis=2)
        ok = np.abs(det) > _EPS
        inv_det = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tvec = o - v[:, 0][None]  # (R, T, 3)
        u = np.sum(tvec * pvec, axis=2) * inv_det
        qvec = np.cross(tvec, e1[None])
        w = np.sum(d * qvec, axis=2) * inv_det
        t = np.sum(e2[None] * qvec, axis=2) * inv_det
        ok &= (u >= -1e-12) & (w >= -1e-12) & (u + w <= 1 + 1e-12) & (t > 1e-9)
        if exclude is not None:
            ok &= tris[None, :] != exclude[rays][:, None]
        t = np.where(ok, t, np.inf)
        local_best = t.min(axis=1)
        improved = local_best < best_t[rays]
        if np.any(improved):
            which = t.argmin(axis=1)
            rr = rays[improved]
            best_t[rr] = local_best[improved]
            best_tri[rr] = tris[which[improved]]
