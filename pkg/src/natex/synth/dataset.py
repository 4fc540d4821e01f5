"""Procedural dataset generation: assets, condition renders, manifest.

Layout under the dataset root:
    manifest.json
    <id>/mesh.ply       geometry + per-vertex albedo preview (+ normals, uv)
    <id>/cloud.ply      color point cloud (exact program colors)
    <id>/condA.png      condition render, illumination A
    <id>/condB.png      same camera, illumination B
    <id>/labels.bin     u8 per face (all zero for single-part shapes)
    <id>/material.ply   material-encoded point cloud (same positions), optional
"""

from __future__ import annotations

import hashlib
import json
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from ..errors import DataError, ParameterError
from ..geom.mesh import TexturedMesh, normalize_mesh
from ..geom.meshio import write_mesh_ply, write_pointcloud_ply
from ..geom.render import OrthoCamera, splat_render
from ..geom.sampling import ColorPointCloud, sample_color_points
from ..seeding import substream
from . import programs as progs
from .primitives import assemble, build_primitive

MANIFEST_VERSION = "natex-dataset-v1"

ELEVATION_RANGE = (-np.pi / 6.0, np.pi / 4.0)  # -30 deg .. 45 deg

_CANONICAL_PARAMS = {
    "sphere": {"radius": 0.9},
    "box": {"sx": 1.4, "sy": 1.0, "sz": 0.8},
    "torus": {"major_radius": 0.85, "minor_radius": 0.35},
    "cylinder": {"radius": 0.55, "height": 1.5},
    "capsule": {"radius": 0.45, "height": 1.0},
}


@dataclass
class AssetSpec:
    """Recipe for one procedural asset; fully determines its geometry and colors."""

    shape_kind: str
    shape_params: dict
    texture_program: dict           # serialized TextureProgram
    material_program: Optional[dict] = None
    parts: Optional[list] = None    # for multi_part_union: [(kind, params, offset)]
    seed: int = 0

    def to_dict(self) -> dict:
        return {"shape_kind": self.shape_kind, "shape_params": self.shape_params,
                "texture_program": self.texture_program,
                "material_program": self.material_program,
                "parts": self.parts, "seed": self.seed}

    @staticmethod
    def from_dict(d: dict) -> "AssetSpec":
        return AssetSpec(**d)


def _jitter_params(kind: str, rng: np.random.Generator, jitter: float) -> dict:
    base = dict(_CANONICAL_PARAMS[kind])
    if jitter > 0:
        for key in base:
            base[key] = float(base[key] * (1.0 + jitter * rng.uniform(-0.35, 0.35)))
    return base


def _sample_texture_program(rng: np.random.Generator, weights: dict,
                            n_parts: int) -> dict:
    names = sorted(weights)
    w = np.array([weights[n] for n in names], dtype=np.float64)
    if w.sum() <= 0:
        raise ParameterError("texture weights must not all be zero")
    name = names[rng.choice(len(names), p=w / w.sum())]
    palette = progs.PART_PALETTE
    two = palette[rng.choice(len(palette), size=2, replace=False)]
    if name == "checker":
        prog = progs.Checker(period=float(rng.uniform(0.4, 0.9)),
                             phase=float(rng.uniform(0, 1)),
                             color_a=two[0], color_b=two[1])
    elif name == "stripes":
        prog = progs.Stripes(count=int(rng.integers(3, 9)),
                             phase=float(rng.uniform(0, 1)),
                             color_a=two[0], color_b=two[1])
    elif name == "axis_gradient":
        prog = progs.AxisGradient(axis=int(rng.integers(0, 3)),
                                  color_lo=two[0], color_hi=two[1])
    elif name == "noise_blobs":
        prog = progs.NoiseBlobs(seed=int(rng.integers(0, 2 ** 31)),
                                n_blobs=int(rng.integers(3, 7)),
                                radius=float(rng.uniform(0.35, 0.7)),
                                base_color=two[0],
                                blob_colors=palette[:8])
    elif name == "per_part_palette":
        prog = progs.PerPartPalette(k=max(2, n_parts))
    else:
        raise ParameterError(f"unknown texture program '{name}'")
    return prog.to_dict()


def sample_asset_spec(seed: int, shape_weights: dict, texture_weights: dict,
                      material_mode: str = "none", param_jitter: float = 1.0) -> AssetSpec:
    """Draw one AssetSpec from the configured shape/texture distribution."""
    rng = np.random.default_rng(seed)
    names = sorted(shape_weights)
    w = np.array([shape_weights[n] for n in names], dtype=np.float64)
    if w.sum() <= 0:
        raise ParameterError("shape weights must not all be zero")
    kind = names[rng.choice(len(names), p=w / w.sum())]

    parts = None
    if kind == "multi_part_union":
        n_parts = int(rng.integers(2, 4))
        parts = []
        base_kinds = ["box", "sphere", "cylinder"]
        for p in range(n_parts):
            pk = base_kinds[rng.integers(0, len(base_kinds))]
            params = _jitter_params(pk, rng, param_jitter)
            # shrink parts and spread them along x so the union stays connected-ish
            params = {k: v * 0.6 for k, v in params.items()}
            offset = [float(p * 0.8 - (n_parts - 1) * 0.4), 0.0, 0.0]
            parts.append([pk, params, offset])
        shape_params: dict = {}
        n_for_texture = n_parts
    else:
        shape_params = _jitter_params(kind, rng, param_jitter)
        n_for_texture = 1

    texture = _sample_texture_program(
        rng, texture_weights, n_for_texture)

    material = None
    if material_mode == "constant":
        material = progs.ConstantMaterial(
            roughness=float(rng.uniform(0.1, 0.9)),
            metallic=float(rng.choice([0.0, 1.0]))).to_dict()
    elif material_mode == "field":
        material = progs.AxisRampMaterial(
            axis=int(rng.integers(0, 3)),
            rough_lo=float(rng.uniform(0.0, 0.4)),
            rough_hi=float(rng.uniform(0.6, 1.0)),
            metallic=float(rng.choice([0.0, 0.5, 1.0]))).to_dict()
    elif material_mode != "none":
        raise ParameterError(f"unknown material mode '{material_mode}'")

    return AssetSpec(shape_kind=kind, shape_params=shape_params,
                     texture_program=texture, material_program=material,
                     parts=parts, seed=seed)


def make_asset(spec: AssetSpec) -> TexturedMesh:
    """Build the normalized mesh for a spec, colored by its texture program."""
    if spec.shape_kind == "multi_part_union":
        if not spec.parts or not 2 <= len(spec.parts) <= 6:
            raise ParameterError("multi_part_union needs 2..6 parts")
        groups = [build_primitive(kind, params) for kind, params, _ in spec.parts]
        offsets = [np.asarray(off, dtype=np.float64) for _, _, off in spec.parts]
        mesh, _ = assemble(groups, offsets)
    else:
        mesh, _ = assemble([build_primitive(spec.shape_kind, spec.shape_params)])

    mesh, _record = normalize_mesh(mesh)
    program = progs.program_from_dict(spec.texture_program)
    mesh.color_source = progs.ProceduralColorSource(program)
    return mesh


def render_condition_pair(mesh: TexturedMesh, seed: int, n_points: int = 16384,
                          size: int = 128, light_mode: str = "lambert"):
    """One random camera, two renders under independent random illuminations.

    light_mode 'none' renders flat albedo twice (used as segmentation masks).
    Returns (image_a, image_b, camera).
    """
    rng = np.random.default_rng(seed)
    azimuth = float(rng.uniform(0.0, 2.0 * np.pi))
    elevation = float(rng.uniform(*ELEVATION_RANGE))
    camera = OrthoCamera.from_azimuth_elevation(azimuth, elevation)
    cloud = sample_color_points(mesh, n_points, seed=substream(seed, "render-points"))

    def random_light():
        v = rng.normal(size=3)
        return v / np.linalg.norm(v)

    if light_mode == "none":
        light_a = light_b = None
    elif light_mode == "lambert":
        light_a, light_b = random_light(), random_light()
    else:
        raise ParameterError(f"unknown light mode '{light_mode}'")

    img_a = splat_render(cloud, camera, light_a, size)
    img_b = splat_render(cloud, camera, light_b, size)
    return img_a, img_b, camera


@dataclass
class DatasetManifest:
    version: str
    config_hash: str
    assets: list = field(default_factory=list)   # records with id/spec/files/split
    errors: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"version": self.version, "config_hash": self.config_hash,
                "assets": self.assets, "errors": self.errors}

    @staticmethod
    def load(path) -> "DatasetManifest":
        path = Path(path)
        if not path.exists():
            raise DataError(f"manifest not found: {path}")
        d = json.loads(path.read_text())
        if d.get("version") != MANIFEST_VERSION:
            raise DataError(f"unsupported manifest version {d.get('version')!r}")
        return DatasetManifest(version=d["version"], config_hash=d["config_hash"],
                               assets=d["assets"], errors=d.get("errors", []))

    def split(self, which: str) -> list:
        return [a for a in self.assets if a["split"] == which]


def _split_assignment(ids: list[str]) -> dict:
    """Deterministic 90/10 split: lowest-hash tenth is held out."""
    hashed = sorted(ids, key=lambda i: hashlib.sha256(i.encode()).hexdigest())
    n_heldout = len(ids) // 10
    heldout = set(hashed[:n_heldout])
    return {i: ("heldout" if i in heldout else "train") for i in ids}


def make_dataset(config: dict, root) -> DatasetManifest:
    """Generate `config['count']` assets with clouds, renders and labels."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    count = int(config["count"])
    master = int(config["seed"])
    n_points = int(config.get("n_points", 65536))
    render_size = int(config.get("render_size", 128))
    light_mode = config.get("light_mode", "lambert")
    shape_weights = config.get("shape_weights", {"sphere": 1.0, "box": 1.0,
                                                 "torus": 1.0, "cylinder": 1.0,
                                                 "capsule": 1.0,
                                                 "multi_part_union": 1.0})
    texture_weights = config.get("texture_weights", {"checker": 1.0, "stripes": 1.0,
                                                     "axis_gradient": 1.0,
                                                     "noise_blobs": 1.0})
    material_mode = config.get("material_mode", "none")
    param_jitter = float(config.get("param_jitter", 1.0))

    config_hash = hashlib.sha256(
        json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]

    ids = [f"{i:06d}" for i in range(count)]
    split = _split_assignment(ids)
    manifest = DatasetManifest(version=MANIFEST_VERSION, config_hash=config_hash)

    for i, asset_id in enumerate(ids):
        try:
            spec = sample_asset_spec(substream(master, f"asset-{asset_id}"),
                                     shape_weights, texture_weights,
                                     material_mode, param_jitter)
            record = _generate_one(asset_id, spec, root, n_points, render_size,
                                   light_mode)
            record["split"] = split[asset_id]
            manifest.assets.append(record)
        except Exception as exc:  # noqa: BLE001 - partial failure is recorded
            manifest.errors.append({"id": asset_id, "error": repr(exc),
                                    "trace": traceback.format_exc(limit=3)})

    path = root / "manifest.json"
    path.write_text(json.dumps(manifest.to_dict(), sort_keys=True, indent=1))
    return manifest


def _generate_one(asset_id: str, spec: AssetSpec, root: Path, n_points: int,
                  render_size: int, light_mode: str) -> dict:
    adir = root / asset_id
    adir.mkdir(parents=True, exist_ok=True)
    mesh = make_asset(spec)
    cloud = sample_color_points(mesh, n_points,
                                seed=substream(spec.seed, "cloud"))

    # per-vertex albedo preview for the stored mesh
    program = progs.program_from_dict(spec.texture_program)
    vert_labels = None
    if mesh.part_labels is not None:
        vert_labels = np.zeros(len(mesh.vertices), dtype=np.int64)
        for fi, face in enumerate(mesh.faces):
            vert_labels[face] = mesh.part_labels[fi]
    vcolors = np.clip(program(mesh.vertices, vert_labels), 0.0, 1.0)
    uv_pv = _per_vertex_uv(mesh)
    write_mesh_ply(adir / "mesh.ply", mesh, vertex_colors=vcolors, vertex_uv=uv_pv)

    write_pointcloud_ply(adir / "cloud.ply", cloud.positions, cloud.normals,
                         cloud.colors)

    img_a, img_b, camera = render_condition_pair(
        mesh, seed=substream(spec.seed, "views"), n_points=min(n_points, 16384),
        size=render_size, light_mode=light_mode)
    Image.fromarray(img_a).save(adir / "condA.png")
    Image.fromarray(img_b).save(adir / "condB.png")

    labels = (mesh.part_labels if mesh.part_labels is not None
              else np.zeros(len(mesh.faces), dtype=np.int32))
    (adir / "labels.bin").write_bytes(labels.astype(np.uint8).tobytes())

    files = {"mesh": f"{asset_id}/mesh.ply", "cloud": f"{asset_id}/cloud.ply",
             "condA": f"{asset_id}/condA.png", "condB": f"{asset_id}/condB.png",
             "labels": f"{asset_id}/labels.bin"}

    if spec.material_program is not None:
        material = progs.material_from_dict(spec.material_program)
        write_pointcloud_ply(adir / "material.ply", cloud.positions, cloud.normals,
                             material.as_colors(cloud.positions))
        files["material"] = f"{asset_id}/material.ply"

    n_parts = int(labels.max()) + 1
    return {"id": asset_id, "spec": spec.to_dict(), "files": files,
            "camera": camera.to_dict(), "n_parts": n_parts}


def _per_vertex_uv(mesh: TexturedMesh):
    if mesh.uv is None:
        return None
    uv = np.zeros((len(mesh.vertices), 2))
    uv[mesh.faces.reshape(-1)] = mesh.uv.reshape(-1, 2)
    return uv


def validate_cloud_file(path) -> ColorPointCloud:
    """Reload a persisted cloud and re-run the invariant checks."""
    from ..geom.meshio import load_pointcloud_ply
    pos, nrm, col = load_pointcloud_ply(path)
    return ColorPointCloud(pos, nrm, col, np.zeros(len(pos), dtype=np.int64))
