"""Triangle mesh container, color sources, and normalization.

Conventions used throughout the package:
  - vertices are float64 (V, 3), faces int32 (F, 3), all faces triangles
  - UVs are stored per face corner (F, 3, 2) in [0, 1] ("wedge" UVs), so
    chart seams are representable without vertex welding constraints
  - vertex normals are unit length; degenerate (zero-area) faces are kept
    in the mesh but flagged and excluded from surface sampling
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import InvalidGeometryError

DEGENERATE_AREA_EPS = 1e-12
NORMAL_UNIT_TOL = 1e-4


class ColorSource:
    """Base for per-surface-point color evaluation.

    Subclasses implement ``colors_at`` returning float RGB in [0, 1] for a
    batch of surface points described by (face index, barycentric, position).
    """

    kind = "none"

    def colors_at(self, mesh: "TexturedMesh", face_idx: np.ndarray,
                  bary: np.ndarray, positions: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class VertexColorSource(ColorSource):
    """Per-vertex RGB, barycentrically interpolated."""

    kind = "vertex"

    def __init__(self, colors: np.ndarray):
        colors = np.asarray(colors, dtype=np.float64)
        if colors.ndim != 2 or colors.shape[1] != 3:
            raise InvalidGeometryError("vertex colors must be (V, 3)")
        self.colors = np.clip(colors, 0.0, 1.0)

    def colors_at(self, mesh, face_idx, bary, positions):
        tri = self.colors[mesh.faces[face_idx]]          # (n, 3, 3)
        return np.einsum("nk,nkc->nc", bary, tri)


class TextureColorSource(ColorSource):
    """RGBA8 texture image sampled bilinearly through the mesh UVs.

    Row 0 of the image is the V=1 edge of UV space (standard image-on-disk
    orientation for OBJ textures).
    """

    kind = "texture"

    def __init__(self, image: np.ndarray):
        image = np.asarray(image)
        if image.ndim != 3 or image.shape[2] not in (3, 4) or image.dtype != np.uint8:
            raise InvalidGeometryError("texture must be uint8 (H, W, 3|4)")
        if image.shape[2] == 3:
            image = np.concatenate(
                [image, np.full(image.shape[:2] + (1,), 255, np.uint8)], axis=2)
        self.image = image

    def colors_at(self, mesh, face_idx, bary, positions):
        if mesh.uv is None:
            raise InvalidGeometryError("texture color source requires UVs")
        uv = np.einsum("nk,nkc->nc", bary, mesh.uv[face_idx])
        return sample_texture_bilinear(self.image, uv)[:, :3]


class PaletteColorSource(ColorSource):
    """Per-face small-integer labels mapped through a fixed color table."""

    kind = "palette"

    def __init__(self, palette: np.ndarray):
        self.palette = np.asarray(palette, dtype=np.float64)

    def colors_at(self, mesh, face_idx, bary, positions):
        if mesh.part_labels is None:
            raise InvalidGeometryError("palette color source requires part labels")
        return self.palette[mesh.part_labels[face_idx]]


class MaterialColorSource(ColorSource):
    """Per-vertex (roughness, metallic) packed as (R, G, 0) RGB."""

    kind = "material"

    def __init__(self, roughness: np.ndarray, metallic: np.ndarray):
        self.roughness = np.clip(np.asarray(roughness, dtype=np.float64), 0.0, 1.0)
        self.metallic = np.clip(np.asarray(metallic, dtype=np.float64), 0.0, 1.0)

    def colors_at(self, mesh, face_idx, bary, positions):
        tri_r = self.roughness[mesh.faces[face_idx]]
        tri_m = self.metallic[mesh.faces[face_idx]]
        r = np.einsum("nk,nk->n", bary, tri_r)
        m = np.einsum("nk,nk->n", bary, tri_m)
        return np.stack([r, m, np.zeros_like(r)], axis=1)


def sample_texture_bilinear(image: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Bilinear RGBA lookup, uv in [0,1]^2, edge-clamped. Returns float [0,1]."""
    h, w = image.shape[:2]
    u = np.clip(uv[:, 0], 0.0, 1.0) * w - 0.5
    v = (1.0 - np.clip(uv[:, 1], 0.0, 1.0)) * h - 0.5
    x0 = np.floor(u).astype(np.int64)
    y0 = np.floor(v).astype(np.int64)
    fx = u - x0
    fy = v - y0
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    img = image.astype(np.float64) / 255.0
    c00 = img[y0c, x0c]
    c10 = img[y0c, x1c]
    c01 = img[y1c, x0c]
    c11 = img[y1c, x1c]
    fx = fx[:, None]
    fy = fy[:, None]
    return (c00 * (1 - fx) * (1 - fy) + c10 * fx * (1 - fy)
            + c01 * (1 - fx) * fy + c11 * fx * fy)


@dataclass
class TexturedMesh:
    """Triangle mesh with per-vertex attributes, wedge UVs and a color source."""

    vertices: np.ndarray                      # (V, 3) float64
    faces: np.ndarray                         # (F, 3) int32
    vertex_normals: np.ndarray                # (V, 3) float64, unit
    uv: Optional[np.ndarray] = None           # (F, 3, 2) float64 in [0, 1]
    color_source: Optional[ColorSource] = None
    part_labels: Optional[np.ndarray] = None  # (F,) int32

    _face_areas: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int32)
        self.vertex_normals = np.ascontiguousarray(self.vertex_normals, dtype=np.float64)
        if self.uv is not None:
            self.uv = np.ascontiguousarray(self.uv, dtype=np.float64)
        if self.part_labels is not None:
            self.part_labels = np.ascontiguousarray(self.part_labels, dtype=np.int32)
        self.validate()

    def validate(self):
        v, f = self.vertices, self.faces
        if v.ndim != 2 or v.shape[1] != 3 or f.ndim != 2 or f.shape[1] != 3:
            raise InvalidGeometryError("vertices must be (V,3), faces (F,3)")
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise InvalidGeometryError("face index out of range")
        if self.vertex_normals.shape != v.shape:
            raise InvalidGeometryError("vertex_normals must match vertices")
        norms = np.linalg.norm(self.vertex_normals, axis=1)
        if len(norms) and np.any(np.abs(norms - 1.0) > NORMAL_UNIT_TOL):
            raise InvalidGeometryError("vertex normals must be unit length")
        if self.uv is not None:
            if self.uv.shape != (len(f), 3, 2):
                raise InvalidGeometryError("uv must be (F, 3, 2)")
            if len(self.uv) and (self.uv.min() < -1e-9 or self.uv.max() > 1 + 1e-9):
                raise InvalidGeometryError("uv coordinates must lie in [0, 1]")
            np.clip(self.uv, 0.0, 1.0, out=self.uv)
        if self.part_labels is not None and self.part_labels.shape != (len(f),):
            raise InvalidGeometryError("part_labels must be (F,)")

    @property
    def face_areas(self) -> np.ndarray:
        if self._face_areas is None:
            tri = self.vertices[self.faces]
            cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
            self._face_areas = 0.5 * np.linalg.norm(cross, axis=1)
        return self._face_areas

    @property
    def degenerate_faces(self) -> np.ndarray:
        """Boolean mask of zero-area faces (kept in mesh, excluded from sampling)."""
        return self.face_areas <= DEGENERATE_AREA_EPS

    def face_normals(self) -> np.ndarray:
        tri = self.vertices[self.faces]
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        norm = np.linalg.norm(cross, axis=1, keepdims=True)
        return cross / np.maximum(norm, 1e-30)

    def face_centers(self) -> np.ndarray:
        return self.vertices[self.faces].mean(axis=1)

    def replace_vertices(self, vertices: np.ndarray) -> "TexturedMesh":
        return TexturedMesh(vertices, self.faces.copy(), self.vertex_normals.copy(),
                            None if self.uv is None else self.uv.copy(),
                            self.color_source,
                            None if self.part_labels is None else self.part_labels.copy())


def compute_vertex_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Area-weighted average of incident face normals, renormalized."""
    tri = vertices[faces]
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    normals = np.zeros_like(vertices)
    for k in range(3):
        np.add.at(normals, faces[:, k], cross)
    lengths = np.linalg.norm(normals, axis=1, keepdims=True)
    # isolated or fully-degenerate vertices get an arbitrary fixed normal
    fallback = np.zeros_like(normals)
    fallback[:, 2] = 1.0
    ok = lengths[:, 0] > 1e-20
    return np.where(ok[:, None], normals / np.maximum(lengths, 1e-30), fallback)


@dataclass(frozen=True)
class NormalizationRecord:
    """Affine map normalized = (original - center) * scale; scale > 0."""

    center: np.ndarray
    scale: float

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.center) * self.scale

    def invert(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) / self.scale + self.center

    def to_dict(self) -> dict:
        return {"center": [float(c) for c in self.center], "scale": float(self.scale)}

    @staticmethod
    def from_dict(d: dict) -> "NormalizationRecord":
        return NormalizationRecord(np.asarray(d["center"], dtype=np.float64),
                                   float(d["scale"]))


def normalize_mesh(mesh: TexturedMesh) -> tuple[TexturedMesh, NormalizationRecord]:
    """Center the AABB at the origin and scale the longest edge to span 2.

    The result fits [-1,1]^3 with aspect preserved. Raises
    InvalidGeometryError when every face is degenerate.
    """
    if len(mesh.faces) == 0 or bool(mesh.degenerate_faces.all()):
        raise InvalidGeometryError("mesh has no non-degenerate face")
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    center = (lo + hi) / 2.0
    extent = float((hi - lo).max())
    if extent <= 0:
        raise InvalidGeometryError("mesh has zero spatial extent")
    record = NormalizationRecord(center=center, scale=2.0 / extent)
    return mesh.replace_vertices(record.apply(mesh.vertices)), record


def joint_normalize(meshes: list[TexturedMesh]) -> tuple[list[TexturedMesh], NormalizationRecord]:
    """Normalize several meshes with one shared record (combined AABB)."""
    if not meshes:
        raise InvalidGeometryError("no meshes to normalize")
    lo = np.min([m.vertices.min(axis=0) for m in meshes], axis=0)
    hi = np.max([m.vertices.max(axis=0) for m in meshes], axis=0)
    center = (lo + hi) / 2.0
    extent = float((hi - lo).max())
    if extent <= 0:
        raise InvalidGeometryError("meshes have zero spatial extent")
    record = NormalizationRecord(center=center, scale=2.0 / extent)
    return [m.replace_vertices(record.apply(m.vertices)) for m in meshes], record
