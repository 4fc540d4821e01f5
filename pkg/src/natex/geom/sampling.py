"""Surface sampling: color point clouds and near-surface supervision queries."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import InvalidGeometryError, ParameterError
from .distance import TriangleBVH, truncated_occupancy
from .mesh import TexturedMesh

POSITION_BOUND_TOL = 1e-6


@dataclass
class ColorPointCloud:
    """Surface samples carrying position, unit normal, RGB in [0,1]."""

    positions: np.ndarray    # (N, 3)
    normals: np.ndarray      # (N, 3)
    colors: np.ndarray       # (N, 3)
    source_face: np.ndarray  # (N,) provenance face indices

    def __post_init__(self):
        self.validate()

    def validate(self):
        n = len(self.positions)
        if n == 0:
            raise InvalidGeometryError("point cloud must be non-empty")
        if self.normals.shape != (n, 3) or self.colors.shape != (n, 3):
            raise InvalidGeometryError("normals/colors must match positions")
        if self.colors.min() < -1e-9 or self.colors.max() > 1 + 1e-9:
            raise InvalidGeometryError("colors must lie in [0, 1]")
        lengths = np.linalg.norm(self.normals, axis=1)
        if np.any(np.abs(lengths - 1.0) > 1e-4):
            raise InvalidGeometryError("normals must be unit length")
        if np.abs(self.positions).max() > 1.0 + POSITION_BOUND_TOL:
            raise InvalidGeometryError("positions must lie inside [-1,1]^3")

    def __len__(self):
        return len(self.positions)

    def subset(self, idx: np.ndarray) -> "ColorPointCloud":
        return ColorPointCloud(self.positions[idx], self.normals[idx],
                               self.colors[idx], self.source_face[idx])


@dataclass
class QuerySet:
    """Decoder supervision targets: on-surface and normal-offset queries."""

    positions: np.ndarray                 # (M, 3)
    normals: Optional[np.ndarray]         # (M, 3) source-point normals
    target_colors: Optional[np.ndarray]   # (M, 3)
    target_occupancy: Optional[np.ndarray]  # (M,)
    is_near_surface: np.ndarray           # (M,) bool


def sample_color_points(mesh: TexturedMesh, n: int, seed: int) -> ColorPointCloud:
    """Area-weighted uniform surface sampling with interpolated attributes.

    Colors come from the mesh color source (barycentric / bilinear-texture
    interpolation); meshes without a color source sample as black, which is
    the geometry-only path used at inference. Deterministic per (mesh, n, seed).
    """
    if n < 1:
        raise ParameterError(f"sample count must be >= 1, got {n}")
    areas = mesh.face_areas.copy()
    areas[mesh.degenerate_faces] = 0.0
    total = areas.sum()
    if total <= 0:
        raise InvalidGeometryError("mesh has zero total surface area")

    rng = np.random.default_rng(seed)
    cdf = np.cumsum(areas / total)
    cdf[-1] = 1.0
    face_idx = np.searchsorted(cdf, rng.random(n), side="right").astype(np.int64)
    face_idx = np.minimum(face_idx, len(areas) - 1)

    # sqrt trick gives uniform barycentric samples
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    bary = np.stack([1.0 - r1, r1 * (1.0 - r2), r1 * r2], axis=1)

    tri = mesh.vertices[mesh.faces[face_idx]]
    positions = np.einsum("nk,nkc->nc", bary, tri)

    tri_n = mesh.vertex_normals[mesh.faces[face_idx]]
    normals = np.einsum("nk,nkc->nc", bary, tri_n)
    lengths = np.linalg.norm(normals, axis=1, keepdims=True)
    fallback = mesh.face_normals()[face_idx]
    normals = np.where(lengths > 1e-12, normals / np.maximum(lengths, 1e-30), fallback)

    if mesh.color_source is not None:
        colors = np.clip(mesh.color_source.colors_at(mesh, face_idx, bary, positions), 0.0, 1.0)
    else:
        colors = np.zeros_like(positions)

    return ColorPointCloud(positions=positions, normals=normals, colors=colors,
                           source_face=face_idx)


def offset_near_surface(cloud: ColorPointCloud, gamma: float, frac: float, seed: int,
                        bvh: TriangleBVH, trunc_s: float) -> QuerySet:
    """Offset a random fraction of points along their normals within +-gamma.

    Offset queries keep the originating point's color as target; their
    occupancy target is the truncated UDF of the offset position. Unselected
    points stay on-surface with occupancy target 0.
    """
    if not 0.0 <= frac <= 1.0:
        raise ParameterError(f"frac must be in [0,1], got {frac}")
    if gamma <= 0:
        raise ParameterError(f"gamma must be positive, got {gamma}")
    n = len(cloud)
    rng = np.random.default_rng(seed)
    k = int(np.floor(frac * n))
    picked = rng.permutation(n)[:k]

    positions = cloud.positions.copy()
    occupancy = np.zeros(n)
    near = np.zeros(n, dtype=bool)
    if k:
        delta = rng.uniform(-gamma, gamma, size=k)
        positions[picked] = cloud.positions[picked] + delta[:, None] * cloud.normals[picked]
        occupancy[picked] = truncated_occupancy(bvh.udf(positions[picked]), trunc_s)
        near[picked] = True

    return QuerySet(positions=positions, normals=cloud.normals.copy(),
                    target_colors=cloud.colors.copy(), target_occupancy=occupancy,
                    is_near_surface=near)
