"""Z-buffered point-splat renderer with orthographic cameras.

Used for condition images and evaluation views. Shading is albedo-only when
no light is given, otherwise Lambert with a fixed additive ambient term.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .sampling import ColorPointCloud

AMBIENT = 0.2
# half-extent sqrt(3) guarantees any point of [-1,1]^3 projects inside the frame
DEFAULT_HALF_EXTENT = float(np.sqrt(3.0))


@dataclass(frozen=True)
class OrthoCamera:
    """Orthographic camera: orthonormal (right, up, forward), forward = view direction."""

    right: np.ndarray
    up: np.ndarray
    forward: np.ndarray
    half_extent: float = DEFAULT_HALF_EXTENT

    @staticmethod
    def from_azimuth_elevation(azimuth: float, elevation: float,
                               half_extent: float = DEFAULT_HALF_EXTENT) -> "OrthoCamera":
        """Camera on the unit sphere looking at the origin; z is world up."""
        eye = np.array([np.cos(elevation) * np.cos(azimuth),
                        np.cos(elevation) * np.sin(azimuth),
                        np.sin(elevation)])
        forward = -eye / np.linalg.norm(eye)
        world_up = np.array([0.0, 0.0, 1.0])
        if abs(forward @ world_up) > 0.999:
            world_up = np.array([0.0, 1.0, 0.0])
        right = np.cross(forward, world_up)
        right /= np.linalg.norm(right)
        up = np.cross(right, forward)
        return OrthoCamera(right=right, up=up, forward=forward, half_extent=half_extent)

    def to_dict(self) -> dict:
        return {"right": self.right.tolist(), "up": self.up.tolist(),
                "forward": self.forward.tolist(), "half_extent": self.half_extent}

    @staticmethod
    def from_dict(d: dict) -> "OrthoCamera":
        return OrthoCamera(np.asarray(d["right"]), np.asarray(d["up"]),
                           np.asarray(d["forward"]), float(d["half_extent"]))


def six_orthogonal_views(half_extent: float = DEFAULT_HALF_EXTENT) -> list[OrthoCamera]:
    """Axis-aligned cameras along +-x, +-y, +-z with deterministic ups."""
    specs = [((-1, 0, 0), (0, 0, 1)), ((1, 0, 0), (0, 0, 1)),
             ((0, -1, 0), (0, 0, 1)), ((0, 1, 0), (0, 0, 1)),
             ((0, 0, -1), (0, 1, 0)), ((0, 0, 1), (0, 1, 0))]
    cams = []
    for fwd, world_up in specs:
        forward = np.asarray(fwd, dtype=np.float64)
        up_hint = np.asarray(world_up, dtype=np.float64)
        right = np.cross(forward, up_hint)
        right /= np.linalg.norm(right)
        up = np.cross(right, forward)
        cams.append(OrthoCamera(right=right, up=up, forward=forward,
                                half_extent=half_extent))
    return cams


def shade_points(colors: np.ndarray, normals: np.ndarray,
                 light: Optional[np.ndarray]) -> np.ndarray:
    """Albedo if light is None, else albedo * max(0, n.l) + ambient, clipped."""
    if light is None:
        return colors
    light = np.asarray(light, dtype=np.float64)
    light = light / np.linalg.norm(light)
    lambert = np.maximum(normals @ light, 0.0)
    return np.clip(colors * lambert[:, None] + AMBIENT, 0.0, 1.0)


def splat_render(cloud: ColorPointCloud, view: OrthoCamera,
                 light: Optional[np.ndarray], size: int,
                 splat_radius: int = 2) -> np.ndarray:
    """Render the cloud as z-buffered point splats. Returns uint8 RGBA (size, size, 4).

    Every point paints a disk of `splat_radius` pixels; per pixel the point
    nearest the camera wins (ties broken by point index). Background alpha 0.
    """
    p = cloud.positions
    shaded = shade_points(cloud.colors, cloud.normals, light)

    x = p @ view.right
    y = p @ view.up
    depth = p @ view.forward  # smaller = nearer camera
    px = np.round((x / view.half_extent * 0.5 + 0.5) * size - 0.5).astype(np.int64)
    py = np.round((0.5 - y / view.half_extent * 0.5) * size - 0.5).astype(np.int64)

    r = int(splat_radius)
    offs = [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1)
            if dy * dy + dx * dx <= r * r]

    pix_all, depth_all, idx_all = [], [], []
    for dy, dx in offs:
        ix = px + dx
        iy = py + dy
        ok = (ix >= 0) & (ix < size) & (iy >= 0) & (iy < size)
        pix_all.append(iy[ok] * size + ix[ok])
        depth_all.append(depth[ok])
        idx_all.append(np.nonzero(ok)[0])
    pix = np.concatenate(pix_all)
    dep = np.concatenate(depth_all)
    src = np.concatenate(idx_all)

    img = np.zeros((size * size, 4), dtype=np.uint8)
    if len(pix):
        # first entry per pixel after sorting by (pixel, depth, index) is the winner
        order = np.lexsort((src, dep, pix))
        pix_sorted = pix[order]
        first = np.ones(len(pix_sorted), dtype=bool)
        first[1:] = pix_sorted[1:] != pix_sorted[:-1]
        win_pix = pix_sorted[first]
        win_src = src[order][first]
        rgb = np.clip(np.round(shaded[win_src] * 255.0), 0, 255).astype(np.uint8)
        img[win_pix, :3] = rgb
        img[win_pix, 3] = 255
    return img.reshape(size, size, 4)
