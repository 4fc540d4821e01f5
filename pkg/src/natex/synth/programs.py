"""Texture and material programs: pure functions of surface position.

Programs are serializable (name + params) so dataset manifests can record
exactly how every asset was colored, and any sampled point can be re-colored
bit-exactly from the manifest.
"""

from __future__ import annotations

import warnings

import numpy as np

from ..errors import ParameterError
from ..geom.mesh import ColorSource

# 16 fixed segmentation colors, min pairwise L2 distance 0.5 (verified in tests);
# rows 0 and 1 are red and blue by contract
PART_PALETTE = np.array([
    [1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0],
    [1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [0.0, 0.0, 0.0], [1.0, 1.0, 1.0],
    [1.0, 0.5, 0.0], [0.5, 0.0, 1.0], [0.0, 1.0, 0.5], [0.5, 1.0, 0.0],
    [1.0, 0.0, 0.5], [0.0, 0.5, 1.0], [0.5, 0.5, 0.5], [1.0, 1.0, 0.5],
])


def labels_to_palette(labels: np.ndarray, k: int) -> np.ndarray:
    """Map integer part labels in [0, k) to maximally separated palette RGB."""
    if k > len(PART_PALETTE):
        raise ParameterError(f"at most {len(PART_PALETTE)} parts supported, got {k}")
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ParameterError("labels out of range [0, k)")
    return PART_PALETTE[labels]


def palette_to_labels(colors: np.ndarray, allowed: np.ndarray | None = None) -> np.ndarray:
    """Snap RGB colors to the nearest palette entry, returning label indices.

    `allowed` optionally restricts snapping to a subset of palette rows
    (e.g. the labels actually present in a condition mask).
    """
    table = PART_PALETTE if allowed is None else PART_PALETTE[allowed]
    d2 = ((np.asarray(colors)[:, None, :] - table[None, :, :]) ** 2).sum(axis=2)
    idx = np.argmin(d2, axis=1)
    if allowed is not None:
        idx = np.asarray(allowed)[idx]
    return idx.astype(np.int32)


def encode_material_as_color(roughness, metallic) -> np.ndarray:
    """Pack (roughness, metallic) scalars into RGB with the blue channel zero."""
    r = np.asarray(roughness, dtype=np.float64)
    m = np.asarray(metallic, dtype=np.float64)
    if (r.min() < 0 or r.max() > 1 or m.min() < 0 or m.max() > 1):
        warnings.warn("material channels outside [0,1] clamped", stacklevel=2)
        r = np.clip(r, 0.0, 1.0)
        m = np.clip(m, 0.0, 1.0)
    return np.stack([r, m, np.zeros_like(r)], axis=-1)


def decode_material_from_color(colors: np.ndarray):
    """Inverse of encode_material_as_color; the blue channel is discarded."""
    colors = np.asarray(colors)
    return colors[..., 0], colors[..., 1]


class TextureProgram:
    """Pure position -> RGB function; subclasses define `name` and params."""

    name = "base"

    def __call__(self, positions: np.ndarray, labels=None) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> dict:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"name": self.name, "params": self.params()}


class Checker(TextureProgram):
    name = "checker"

    def __init__(self, period: float, phase: float, color_a, color_b):
        if period <= 0:
            raise ParameterError("checker period must be positive")
        self.period = float(period)
        self.phase = float(phase)
        self.color_a = np.asarray(color_a, dtype=np.float64)
        self.color_b = np.asarray(color_b, dtype=np.float64)

    def __call__(self, positions, labels=None):
        cells = np.floor((positions + self.phase) / self.period).sum(axis=1)
        odd = (cells.astype(np.int64) % 2).astype(bool)
        return np.where(odd[:, None], self.color_b, self.color_a)

    def params(self):
        return {"period": self.period, "phase": self.phase,
                "color_a": self.color_a.tolist(), "color_b": self.color_b.tolist()}


class Stripes(TextureProgram):
    """Alternating colors over the azimuth angle around the z axis."""

    name = "stripes"

    def __init__(self, count: int, phase: float, color_a, color_b):
        if count < 1:
            raise ParameterError("stripe count must be >= 1")
        self.count = int(count)
        self.phase = float(phase)
        self.color_a = np.asarray(color_a, dtype=np.float64)
        self.color_b = np.asarray(color_b, dtype=np.float64)

    def __call__(self, positions, labels=None):
        theta = np.arctan2(positions[:, 1], positions[:, 0]) / (2.0 * np.pi) + 0.5
        idx = np.floor((theta + self.phase) * self.count).astype(np.int64) % 2
        return np.where(idx[:, None].astype(bool), self.color_b, self.color_a)

    def params(self):
        return {"count": self.count, "phase": self.phase,
                "color_a": self.color_a.tolist(), "color_b": self.color_b.tolist()}


class AxisGradient(TextureProgram):
    name = "axis_gradient"

    def __init__(self, axis: int, color_lo, color_hi):
        self.axis = int(axis)
        self.color_lo = np.asarray(color_lo, dtype=np.float64)
        self.color_hi = np.asarray(color_hi, dtype=np.float64)

    def __call__(self, positions, labels=None):
        t = np.clip((positions[:, self.axis] + 1.0) / 2.0, 0.0, 1.0)[:, None]
        return self.color_lo * (1.0 - t) + self.color_hi * t

    def params(self):
        return {"axis": self.axis, "color_lo": self.color_lo.tolist(),
                "color_hi": self.color_hi.tolist()}


class NoiseBlobs(TextureProgram):
    """Soft Gaussian color blobs over a base color; centers fixed by seed."""

    name = "noise_blobs"

    def __init__(self, seed: int, n_blobs: int, radius: float, base_color, blob_colors):
        if radius <= 0:
            raise ParameterError("blob radius must be positive")
        self.seed = int(seed)
        self.n_blobs = int(n_blobs)
        self.radius = float(radius)
        self.base_color = np.asarray(base_color, dtype=np.float64)
        self.blob_colors = np.asarray(blob_colors, dtype=np.float64)
        rng = np.random.default_rng(self.seed)
        self.centers = rng.uniform(-1.0, 1.0, size=(self.n_blobs, 3))
        self.color_idx = rng.integers(0, len(self.blob_colors), size=self.n_blobs)

    def __call__(self, positions, labels=None):
        d2 = ((positions[:, None, :] - self.centers[None, :, :]) ** 2).sum(axis=2)
        w = np.exp(-d2 / (2.0 * self.radius ** 2))
        num = self.base_color[None, :] + w @ self.blob_colors[self.color_idx]
        den = 1.0 + w.sum(axis=1, keepdims=True)
        return np.clip(num / den, 0.0, 1.0)

    def params(self):
        return {"seed": self.seed, "n_blobs": self.n_blobs, "radius": self.radius,
                "base_color": self.base_color.tolist(),
                "blob_colors": self.blob_colors.tolist()}


class PerPartPalette(TextureProgram):
    """Color by part label through the fixed palette (needs labels)."""

    name = "per_part_palette"

    def __init__(self, k: int):
        if not 1 <= k <= len(PART_PALETTE):
            raise ParameterError(f"part count must be in [1, {len(PART_PALETTE)}]")
        self.k = int(k)

    def __call__(self, positions, labels=None):
        if labels is None:
            raise ParameterError("per_part_palette requires part labels")
        return labels_to_palette(np.minimum(labels, self.k - 1), self.k)

    def params(self):
        return {"k": self.k}


_PROGRAMS = {p.name: p for p in (Checker, Stripes, AxisGradient, NoiseBlobs, PerPartPalette)}


def program_from_dict(d: dict) -> TextureProgram:
    if d["name"] not in _PROGRAMS:
        raise ParameterError(f"unknown texture program '{d['name']}'")
    return _PROGRAMS[d["name"]](**d["params"])


class MaterialProgram:
    """Pure position -> (roughness, metallic) scalar fields."""

    name = "base"

    def __call__(self, positions: np.ndarray):
        raise NotImplementedError

    def params(self) -> dict:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"name": self.name, "params": self.params()}

    def as_colors(self, positions: np.ndarray) -> np.ndarray:
        r, m = self(positions)
        return encode_material_as_color(r, m)


class ConstantMaterial(MaterialProgram):
    name = "constant"

    def __init__(self, roughness: float, metallic: float):
        self.roughness = float(roughness)
        self.metallic = float(metallic)

    def __call__(self, positions):
        n = len(positions)
        return np.full(n, self.roughness), np.full(n, self.metallic)

    def params(self):
        return {"roughness": self.roughness, "metallic": self.metallic}


class AxisRampMaterial(MaterialProgram):
    """Roughness ramps along an axis; metallic constant."""

    name = "axis_ramp"

    def __init__(self, axis: int, rough_lo: float, rough_hi: float, metallic: float):
        self.axis = int(axis)
        self.rough_lo = float(rough_lo)
        self.rough_hi = float(rough_hi)
        self.metallic = float(metallic)

    def __call__(self, positions):
        t = np.clip((positions[:, self.axis] + 1.0) / 2.0, 0.0, 1.0)
        rough = self.rough_lo + t * (self.rough_hi - self.rough_lo)
        return rough, np.full(len(positions), self.metallic)

    def params(self):
        return {"axis": self.axis, "rough_lo": self.rough_lo,
                "rough_hi": self.rough_hi, "metallic": self.metallic}


_MATERIALS = {p.name: p for p in (ConstantMaterial, AxisRampMaterial)}


def material_from_dict(d: dict) -> MaterialProgram:
    if d["name"] not in _MATERIALS:
        raise ParameterError(f"unknown material program '{d['name']}'")
    return _MATERIALS[d["name"]](**d["params"])


class ProceduralColorSource(ColorSource):
    """Mesh color source backed by a texture program (plus face labels)."""

    kind = "program"

    def __init__(self, program: TextureProgram):
        self.program = program

    def colors_at(self, mesh, face_idx, bary, positions):
        labels = None if mesh.part_labels is None else mesh.part_labels[face_idx]
        return np.clip(self.program(positions, labels), 0.0, 1.0)
