"""UV-space rasterization for texture baking and seam-safe dilation."""

from __future__ import annotations

import numpy as np

from ..errors import MissingUVError, ParameterError
from .mesh import TexturedMesh


def uv_atlas_queries(mesh: TexturedMesh, resolution: int):
    """Rasterize the UV atlas, producing a 3D position and normal per covered texel.

    Texel (row i, col j) covers UV center ((j+0.5)/R, 1-(i+0.5)/R) — row 0 is
    the top of the texture image, matching the bilinear sampler orientation.
    Coverage uses the texel-center rule with top-left tie-breaking; overlapping
    charts resolve first-face-wins in face order.

    Returns (positions (R,R,3), normals (R,R,3), mask (R,R) bool).
    """
    if mesh.uv is None:
        raise MissingUVError(
            "mesh carries no UV coordinates; bake with output mode 'vertex' instead")
    if resolution < 8:
        raise ParameterError(f"atlas resolution must be >= 8, got {resolution}")

    res = int(resolution)
    positions = np.zeros((res, res, 3))
    normals = np.zeros((res, res, 3))
    normals[..., 2] = 1.0
    mask = np.zeros((res, res), dtype=bool)

    verts = mesh.vertices
    vnorm = mesh.vertex_normals
    degenerate = mesh.degenerate_faces

    for fi in range(len(mesh.faces)):
        if degenerate[fi]:
            continue
        uv = mesh.uv[fi]
        # texel-index space: tx = u*R - 0.5, ty = v*R - 0.5 (v up)
        tx = uv[:, 0] * res - 0.5
        ty = uv[:, 1] * res - 0.5
        area2 = (tx[1] - tx[0]) * (ty[2] - ty[0]) - (ty[1] - ty[0]) * (tx[2] - tx[0])
        if area2 == 0.0:
            continue
        order = (0, 1, 2) if area2 > 0 else (0, 2, 1)
        ax, ay = tx[order[0]], ty[order[0]]
        bx, by = tx[order[1]], ty[order[1]]
        cx, cy = tx[order[2]], ty[order[2]]

        x0 = max(int(np.ceil(min(ax, bx, cx))), 0)
        x1 = min(int(np.floor(max(ax, bx, cx))), res - 1)
        y0 = max(int(np.ceil(min(ay, by, cy))), 0)
        y1 = min(int(np.floor(max(ay, by, cy))), res - 1)
        if x1 < x0 or y1 < y0:
            continue
        gx, gy = np.meshgrid(np.arange(x0, x1 + 1, dtype=np.float64),
                             np.arange(y0, y1 + 1, dtype=np.float64))

        def edge(x_from, y_from, x_to, y_to):
            w = (x_to - x_from) * (gy - y_from) - (y_to - y_from) * (gx - x_from)
            # top-left rule in y-up orientation: left edges go up,
            # top edges are horizontal and go left
            dy = y_to - y_from
            dx = x_to - x_from
            top_left = dy > 0 or (dy == 0 and dx < 0)
            return w > 0 if top_left else w >= 0, w

        in0, w0 = edge(ax, ay, bx, by)   # weight of C
        in1, w1 = edge(bx, by, cx, cy)   # weight of A
        in2, w2 = edge(cx, cy, ax, ay)   # weight of B
        inside = in0 & in1 & in2
        if not inside.any():
            continue

        rows = res - 1 - gy.astype(np.int64)   # ty -> image row (row 0 on top)
        cols = gx.astype(np.int64)
        free = inside & ~mask[rows, cols]
        if not free.any():
            continue
        r_sel = rows[free]
        c_sel = cols[free]
        total = w0[free] + w1[free] + w2[free]
        bary = np.stack([w1[free] / total, w2[free] / total, w0[free] / total], axis=1)
        if order != (0, 1, 2):
            bary = bary[:, [0, 2, 1]]

        face = mesh.faces[fi]
        positions[r_sel, c_sel] = bary @ verts[face]
        nrm = bary @ vnorm[face]
        lengths = np.linalg.norm(nrm, axis=1, keepdims=True)
        normals[r_sel, c_sel] = nrm / np.maximum(lengths, 1e-30)
        mask[r_sel, c_sel] = True

    return positions, normals, mask


def dilate_texture(image: np.ndarray, mask: np.ndarray, iterations: int) -> np.ndarray:
    """Grow texel colors outward from the coverage mask (seam safety).

    Per iteration every invalid texel that touches >=1 valid 8-neighbor takes
    the mean of its valid neighbors; texels valid at iteration start never change.
    """
    out = image.astype(np.float64).copy()
    valid = mask.copy()
    h, w = mask.shape
    shifts = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]
    for _ in range(int(iterations)):
        if valid.all():
            break
        acc = np.zeros_like(out)
        cnt = np.zeros((h, w))
        for dy, dx in shifts:
            src_y = slice(max(0, -dy), h - max(0, dy))
            src_x = slice(max(0, -dx), w - max(0, dx))
            dst_y = slice(max(0, dy), h + min(0, dy))
            dst_x = slice(max(0, dx), w + min(0, dx))
            vs = valid[src_y, src_x]
            acc[dst_y, dst_x] += np.where(vs[..., None], out[src_y, src_x], 0.0)
            cnt[dst_y, dst_x] += vs
        grow = (~valid) & (cnt > 0)
        out[grow] = acc[grow] / cnt[grow][:, None]
        valid = valid | grow
    if image.dtype == np.uint8:
        return np.clip(np.round(out), 0, 255).astype(np.uint8)
    return out.astype(image.dtype)
