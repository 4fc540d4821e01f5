"""Unsigned distance queries against a triangle soup via an axis-aligned BVH.

The closest-point routine follows the Voronoi-region case analysis from
Ericson's "Real-Time Collision Detection", vectorized over triangles.
Degenerate triangles are handled by the edge/vertex branches and are kept
in the tree so the distance function stays total.
"""

from __future__ import annotations

import numpy as np

from ..errors import ParameterError

_LEAF_SIZE = 8


def truncated_occupancy(d, s: float):
    """Map unsigned distance to [0,1]: d/s inside the band, saturating at 1.

    Continuous at d == s; scalar or array d.
    """
    if s <= 0:
        raise ParameterError(f"truncation threshold must be positive, got {s}")
    d = np.asarray(d, dtype=np.float64)
    out = np.minimum(d / s, 1.0)
    if out.ndim == 0:
        return float(out)
    return out


def closest_points_on_triangles(p: np.ndarray, a: np.ndarray, b: np.ndarray,
                                c: np.ndarray) -> np.ndarray:
    """Closest point to ``p`` on each triangle (a,b,c); all (T,3), p (3,) or (T,3)."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("...k,...k->...", ab, ap)
    d2 = np.einsum("...k,...k->...", ac, ap)
    bp = p - b
    d3 = np.einsum("...k,...k->...", ab, bp)
    d4 = np.einsum("...k,...k->...", ac, bp)
    cp = p - c
    d5 = np.einsum("...k,...k->...", ab, cp)
    d6 = np.einsum("...k,...k->...", ac, cp)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    tiny = 1e-300
    v_ab = d1 / np.where(np.abs(d1 - d3) < tiny, tiny, d1 - d3)
    v_ac = d2 / np.where(np.abs(d2 - d6) < tiny, tiny, d2 - d6)
    den_bc = (d4 - d3) + (d5 - d6)
    v_bc = (d4 - d3) / np.where(np.abs(den_bc) < tiny, tiny, den_bc)
    denom = va + vb + vc
    denom = np.where(np.abs(denom) < tiny, tiny, denom)
    v_in = vb / denom
    w_in = vc / denom

    q = a + v_in[..., None] * ab + w_in[..., None] * ac            # interior
    on_bc = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
    q = np.where(on_bc[..., None], b + np.clip(v_bc, 0, 1)[..., None] * (c - b), q)
    on_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    q = np.where(on_ac[..., None], a + np.clip(v_ac, 0, 1)[..., None] * ac, q)
    on_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    q = np.where(on_ab[..., None], a + np.clip(v_ab, 0, 1)[..., None] * ab, q)
    at_c = (d6 >= 0) & (d5 <= d6)
    q = np.where(at_c[..., None], c, q)
    at_b = (d3 >= 0) & (d4 <= d3)
    q = np.where(at_b[..., None], b, q)
    at_a = (d1 <= 0) & (d2 <= 0)
    q = np.where(at_a[..., None], a, q)
    return q


def barycentric_coordinates(q: np.ndarray, a: np.ndarray, b: np.ndarray,
                            c: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of on-triangle points q; clamped to the simplex."""
    v0 = b - a
    v1 = c - a
    v2 = q - a
    d00 = np.einsum("...k,...k->...", v0, v0)
    d01 = np.einsum("...k,...k->...", v0, v1)
    d11 = np.einsum("...k,...k->...", v1, v1)
    d20 = np.einsum("...k,...k->...", v2, v0)
    d21 = np.einsum("...k,...k->...", v2, v1)
    denom = d00 * d11 - d01 * d01
    denom = np.where(np.abs(denom) < 1e-300, 1e-300, denom)
    v = (d11 * d20 - d01 * d21) / denom
    w = (d00 * d21 - d01 * d20) / denom
    u = 1.0 - v - w
    bary = np.stack([u, v, w], axis=-1)
    bary = np.clip(bary, 0.0, 1.0)
    return bary / bary.sum(axis=-1, keepdims=True)


class TriangleBVH:
    """Median-split BVH over triangles; read-only after build, safe to share."""

    def __init__(self, vertices: np.ndarray, faces: np.ndarray):
        self.tri_a = np.ascontiguousarray(vertices[faces[:, 0]], dtype=np.float64)
        self.tri_b = np.ascontiguousarray(vertices[faces[:, 1]], dtype=np.float64)
        self.tri_c = np.ascontiguousarray(vertices[faces[:, 2]], dtype=np.float64)
        n = len(faces)
        if n == 0:
            raise ParameterError("cannot build BVH over zero triangles")
        centroids = (self.tri_a + self.tri_b + self.tri_c) / 3.0
        tri_lo = np.minimum(np.minimum(self.tri_a, self.tri_b), self.tri_c)
        tri_hi = np.maximum(np.maximum(self.tri_a, self.tri_b), self.tri_c)

        order = np.arange(n)
        lo_list, hi_list, left_list, right_list, start_list, count_list = [], [], [], [], [], []

        def new_node():
            for lst in (lo_list, hi_list):
                lst.append(None)
            for lst in (left_list, right_list, start_list, count_list):
                lst.append(-1)
            return len(lo_list) - 1

        # iterative build; stack of (node_index, lo, hi) index ranges into `order`
        root = new_node()
        stack = [(root, 0, n)]
        while stack:
            node, lo_i, hi_i = stack.pop()
            idx = order[lo_i:hi_i]
            lo_list[node] = tri_lo[idx].min(axis=0)
            hi_list[node] = tri_hi[idx].max(axis=0)
            if hi_i - lo_i <= _LEAF_SIZE:
                start_list[node] = lo_i
                count_list[node] = hi_i - lo_i
                continue
            cent = centroids[idx]
            axis = int(np.argmax(cent.max(axis=0) - cent.min(axis=0)))
            mid = (hi_i - lo_i) // 2
            part = np.argpartition(cent[:, axis], mid)
            order[lo_i:hi_i] = idx[part]
            left = new_node()
            right = new_node()
            left_list[node] = left
            right_list[node] = right
            stack.append((left, lo_i, lo_i + mid))
            stack.append((right, lo_i + mid, hi_i))

        self.node_lo = np.asarray(lo_list)
        self.node_hi = np.asarray(hi_list)
        self.node_left = np.asarray(left_list, dtype=np.int64)
        self.node_right = np.asarray(right_list, dtype=np.int64)
        self.node_start = np.asarray(start_list, dtype=np.int64)
        self.node_count = np.asarray(count_list, dtype=np.int64)
        self.order = order

        self._centroids = centroids

    def _aabb_dist2_batch(self, node: int, p: np.ndarray) -> np.ndarray:
        d = np.maximum(self.node_lo[node] - p, 0.0) + np.maximum(p - self.node_hi[node], 0.0)
        return np.einsum("nk,nk->n", d, d)

    def _seed_candidates(self, points: np.ndarray):
        """Upper bound per query: exact distance to the centroid-nearest triangle."""
        m = len(points)
        nearest = np.empty(m, dtype=np.int64)
        for lo in range(0, m, 4096):
            hi = min(lo + 4096, m)
            chunk = points[lo:hi]
            d2 = ((chunk[:, None, :] - self._centroids[None, :, :]) ** 2).sum(axis=2)
            nearest[lo:hi] = np.argmin(d2, axis=1)
        q = closest_points_on_triangles(points, self.tri_a[nearest],
                                        self.tri_b[nearest], self.tri_c[nearest])
        d2 = ((q - points) ** 2).sum(axis=1)
        return d2, nearest, q

    def closest(self, points: np.ndarray):
        """Closest surface points for a batch of queries.

        Returns (distances (M,), face indices (M,), closest points (M,3)).
        Wavefront traversal: all queries descend the tree together, pruned by
        a per-query best bound seeded from the centroid-nearest triangle.
        """
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        best_d2, best_f, best_q = self._seed_candidates(points)

        stack = [(0, np.arange(len(points)))]
        while stack:
            node, idx = stack.pop()
            alive = idx[self._aabb_dist2_batch(node, points[idx]) < best_d2[idx]]
            if len(alive) == 0:
                continue
            cnt = self.node_count[node]
            if cnt > 0:
                s = self.node_start[node]
                tri_idx = self.order[s:s + cnt]
                q = closest_points_on_triangles(
                    points[alive][:, None, :], self.tri_a[tri_idx][None],
                    self.tri_b[tri_idx][None], self.tri_c[tri_idx][None])
                d2 = ((q - points[alive][:, None, :]) ** 2).sum(axis=2)
                j = np.argmin(d2, axis=1)
                rows = np.arange(len(alive))
                better = d2[rows, j] < best_d2[alive]
                upd = alive[better]
                best_d2[upd] = d2[rows, j][better]
                best_f[upd] = tri_idx[j[better]]
                best_q[upd] = q[rows, j][better]
            else:
                stack.append((int(self.node_left[node]), alive))
                stack.append((int(self.node_right[node]), alive))
        return np.sqrt(best_d2), best_f, best_q

    def udf(self, points: np.ndarray) -> np.ndarray:
        """Exact unsigned distance to the triangle soup for each query point."""
        return self.closest(points)[0]


def udf(points: np.ndarray, bvh: TriangleBVH):
    """Unsigned distance of one point (3,) or many (M,3) against a built BVH."""
    points = np.asarray(points, dtype=np.float64)
    single = points.ndim == 1
    d = bvh.udf(np.atleast_2d(points))
    return float(d[0]) if single else d
