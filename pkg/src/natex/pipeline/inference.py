"""Mesh-to-texture inference: geometry encoding, sampling, and baking.

Pipeline: normalize mesh -> sample a geometry point cloud -> pick point
queries -> geometry latents -> condition tokens -> rectified-flow sampling
-> decode the color field at UV-texel or vertex positions -> write assets.
All stages are seeded; two runs with identical inputs produce identical bytes.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from PIL import Image

from ..dit.flow import sample as flow_sample
from ..dit.model import ColorDiT, ConditionBundle
from ..errors import DataError, MissingUVError, ParameterError
from ..geom.mesh import NormalizationRecord, TexturedMesh, joint_normalize, normalize_mesh
from ..geom.meshio import load_mesh, write_obj, write_pointcloud_ply
from ..geom.sampling import sample_color_points
from ..geom.uvatlas import dilate_texture, uv_atlas_queries
from ..seeding import substream
from ..synth.programs import PART_PALETTE, palette_to_labels
from ..vae.model import ColorLatentSet, ColorVAE, reparameterize, select_queries
from .checkpoint import CheckpointArchive, tensors_to_module
from .config import PipelineConfig


def load_vae(config: PipelineConfig, ckpt_path) -> ColorVAE:
    model = ColorVAE(config.vae_model_config())
    arch = CheckpointArchive.load(ckpt_path,
                                  expected_config_hash=config.config_hash())
    tensors_to_module(model, arch.tensors, "vae")
    model.eval()
    return model


def load_dit(config: PipelineConfig, ckpt_path) -> tuple[ColorDiT, str]:
    arch = CheckpointArchive.load(ckpt_path,
                                  expected_config_hash=config.config_hash())
    kind = arch.train_state.get("kind", "dit.texture")
    model = ColorDiT(config.dit_model_config())
    tensors_to_module(model, arch.tensors, kind)
    model.eval()
    return model, kind


@dataclass
class LatentScene:
    """Encoded geometry (plus optional color control) for one or more meshes."""

    meshes: list                      # normalized TexturedMesh parts
    record: NormalizationRecord
    geo: "object"                     # GeoLatentSet
    color_control: Optional[ColorLatentSet]


def prepare_scene(mesh_paths, config: PipelineConfig, vae: ColorVAE, seed: int,
                  with_colors: bool, tokens: Optional[int] = None) -> LatentScene:
    meshes = [load_mesh(p) for p in mesh_paths]
    if len(meshes) == 1:
        normalized, record = normalize_mesh(meshes[0])
        normalized = [normalized]
    else:
        normalized, record = joint_normalize(meshes)

    inf = config.inference
    per_part = max(1, inf.n_points // len(normalized))
    pos_list, nrm_list, col_list = [], [], []
    for i, mesh in enumerate(normalized):
        if with_colors and mesh.color_source is None:
            raise DataError("input mesh carries no texture or vertex colors")
        cloud = sample_color_points(mesh, per_part,
                                    seed=substream(seed, f"points-{i}"))
        pos_list.append(cloud.positions.astype(np.float32))
        nrm_list.append(cloud.normals.astype(np.float32))
        col_list.append(cloud.colors.astype(np.float32))
    pos = np.concatenate(pos_list)
    nrm = np.concatenate(nrm_list)
    col = np.concatenate(col_list)

    rng = np.random.default_rng(substream(seed, "context"))
    ctx = rng.choice(len(pos), size=min(config.vae.context_points, len(pos)),
                     replace=False)
    l_infer = tokens or inf.l_infer
    qp, qn, _ = select_queries(pos[ctx], nrm[ctx], min(l_infer, len(ctx)),
                               seed=substream(seed, "queries"))
    with torch.no_grad():
        geo = vae.encode_geometry(torch.from_numpy(pos[ctx])[None],
                                  torch.from_numpy(nrm[ctx])[None],
                                  torch.from_numpy(qp)[None],
                                  torch.from_numpy(qn)[None])
        control = None
        if with_colors:
            post = vae.encode_color(torch.from_numpy(pos[ctx])[None],
                                    torch.from_numpy(nrm[ctx])[None],
                                    torch.from_numpy(col[ctx])[None], geo,
                                    check_anchors=False)
            control = reparameterize(post, deterministic=True)
    return LatentScene(meshes=normalized, record=record, geo=geo,
                       color_control=control)


def run_sampler(scene: LatentScene, dit: ColorDiT, image_path, config: PipelineConfig,
                steps=None, guidance=None, seed: int = 0,
                unconditional: bool = False) -> ColorLatentSet:
    inf = config.inference
    image_tokens = None
    if image_path is not None and not unconditional:
        image = np.asarray(Image.open(image_path).convert("RGBA"))
        with torch.no_grad():
            image_tokens = dit.encode_condition_image(image)
    bundle = ConditionBundle(geo=scene.geo, image_tokens=image_tokens,
                             color_control=scene.color_control,
                             drop_image=unconditional,
                             drop_color=unconditional)
    gen = torch.Generator().manual_seed(substream(seed, "sampler"))
    return flow_sample(dit, bundle, steps=steps or inf.steps,
                       guidance=inf.guidance if guidance is None else guidance,
                       generator=gen)


def decode_colors(vae: ColorVAE, latents: ColorLatentSet,
                  positions: np.ndarray) -> np.ndarray:
    with torch.no_grad():
        field = vae.decode(latents, torch.from_numpy(
            positions.astype(np.float32))[None])
    return field.rgb[0].numpy()


def bake_uv(vae: ColorVAE, latents: ColorLatentSet, mesh: TexturedMesh,
            resolution: int, dilate_iterations: int) -> np.ndarray:
    """Decode the field at UV-texel 3D positions; returns RGBA8 texture."""
    positions, _normals, mask = uv_atlas_queries(mesh, resolution)
    rows, cols = np.nonzero(mask)
    colors = decode_colors(vae, latents, positions[rows, cols])
    image = np.zeros((resolution, resolution, 4), dtype=np.uint8)
    image[rows, cols, :3] = np.clip(np.round(colors * 255.0), 0, 255)
    image[rows, cols, 3] = 255
    rgb = dilate_texture(image[..., :3], mask, dilate_iterations)
    alpha = dilate_texture(image[..., 3:], mask, dilate_iterations)
    return np.concatenate([rgb, alpha], axis=2)


def _write_vertex_ply(path, mesh: TexturedMesh, record: NormalizationRecord,
                      colors: np.ndarray):
    restored = record.invert(mesh.vertices)
    write_pointcloud_ply(path, restored, mesh.vertex_normals, colors)


def _bake_outputs(vae, latents, mesh, record, out_dir: Path, stem: str,
                  output_mode: str, config: PipelineConfig) -> dict:
    inf = config.inference
    files = {}
    if output_mode == "uv":
        if mesh.uv is None:
            raise MissingUVError("mesh has no UVs; rerun with output mode 'vertex'")
        texture = bake_uv(vae, latents, mesh, inf.bake_resolution,
                          inf.dilate_iterations)
        restored = mesh.replace_vertices(record.invert(mesh.vertices))
        obj_path = out_dir / f"{stem}.obj"
        write_obj(obj_path, restored, texture_image=texture)
        files["obj"] = str(obj_path)
        files["texture"] = str(out_dir / f"{stem}.png")
    elif output_mode == "vertex":
        colors = decode_colors(vae, latents, mesh.vertices.astype(np.float32))
        ply_path = out_dir / f"{stem}.ply"
        _write_vertex_ply(ply_path, mesh, record, colors)
        files["ply"] = str(ply_path)
    else:
        raise ParameterError(f"unknown output mode '{output_mode}'")
    return files


def generate_texture(mesh_path, image_path, config: PipelineConfig, vae_ckpt,
                     dit_ckpt, out_dir, *, steps=None, guidance=None, tokens=None,
                     output_mode=None, seed=0, log=print) -> dict:
    """Image-conditioned texture generation for one mesh."""
    t0 = time.time()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vae = load_vae(config, vae_ckpt)
    dit, _kind = load_dit(config, dit_ckpt)
    scene = prepare_scene([mesh_path], config, vae, seed, with_colors=False,
                          tokens=tokens)
    log(f"normalization: center={scene.record.center.tolist()} "
        f"scale={scene.record.scale:.6f}")
    latents = run_sampler(scene, dit, image_path, config, steps=steps,
                          guidance=guidance, seed=seed)
    mode = output_mode or config.inference.output_mode
    files = _bake_outputs(vae, latents, scene.meshes[0], scene.record, out_dir,
                          Path(mesh_path).stem + "_textured", mode, config)
    files["normalization"] = scene.record.to_dict()
    files["wall_clock_s"] = time.time() - t0
    return files


def refine_texture(mesh_path, image_path, config: PipelineConfig, vae_ckpt,
                   refine_ckpt, out_dir, *, steps=None, guidance=None, seed=0,
                   output_mode=None, log=print) -> dict:
    """Color-controlled refinement of an already-textured mesh."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vae = load_vae(config, vae_ckpt)
    dit, kind = load_dit(config, refine_ckpt)
    scene = prepare_scene([mesh_path], config, vae, seed, with_colors=True)
    evals_before = dit.eval_count
    latents = run_sampler(scene, dit, image_path, config, steps=steps,
                          guidance=guidance, seed=seed)
    mode = output_mode or config.inference.output_mode
    files = _bake_outputs(vae, latents, scene.meshes[0], scene.record, out_dir,
                          Path(mesh_path).stem + "_refined", mode, config)
    files["velocity_evals"] = dit.eval_count - evals_before
    files["normalization"] = scene.record.to_dict()
    return files


def generate_material(mesh_path, image_path, config: PipelineConfig, vae_ckpt,
                      material_ckpt, out_dir, *, steps=None, guidance=None,
                      seed=0, log=print) -> dict:
    """Albedo-conditioned roughness/metallic map generation (UV output)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vae = load_vae(config, vae_ckpt)
    dit, _kind = load_dit(config, material_ckpt)
    scene = prepare_scene([mesh_path], config, vae, seed, with_colors=True)
    mesh = scene.meshes[0]
    if mesh.uv is None:
        raise MissingUVError("material baking requires a UV atlas")
    latents = run_sampler(scene, dit, image_path, config, steps=steps,
                          guidance=guidance, seed=seed)
    inf = config.inference
    positions, _n, mask = uv_atlas_queries(mesh, inf.bake_resolution)
    rows, cols = np.nonzero(mask)
    colors = decode_colors(vae, latents, positions[rows, cols])
    res = inf.bake_resolution
    blue_mean = float(colors[:, 2].mean())
    files = {"blue_channel_mean": blue_mean}
    for channel, name in ((0, "roughness"), (1, "metallic")):
        img = np.zeros((res, res), dtype=np.uint8)
        img[rows, cols] = np.clip(np.round(colors[:, channel] * 255.0), 0, 255)
        img = dilate_texture(img[..., None], mask, inf.dilate_iterations)[..., 0]
        path = out_dir / f"{Path(mesh_path).stem}_{name}.png"
        Image.fromarray(img, mode="L").save(path)
        files[name] = str(path)
    return files


def mask_palette_labels(mask_image: np.ndarray, min_frac: float = 0.01):
    """Palette labels present in a condition mask; warns on off-palette colors."""
    alpha = mask_image[:, :, 3] > 0
    if not alpha.any():
        raise DataError("mask image is empty")
    colors = mask_image[alpha][:, :3].astype(np.float64) / 255.0
    d2 = ((colors[:, None, :] - PART_PALETTE[None]) ** 2).sum(axis=2)
    nearest = np.argmin(d2, axis=1)
    dist = np.sqrt(d2[np.arange(len(colors)), nearest])
    if float(dist.mean()) > 0.1:
        warnings.warn("mask contains non-palette-dominant colors; snapping to "
                      "nearest palette entries", stacklevel=2)
    counts = np.bincount(nearest, minlength=len(PART_PALETTE))
    present = np.nonzero(counts >= max(1, int(min_frac * len(colors))))[0]
    return present


def segment_parts(mesh_path, mask_path, config: PipelineConfig, vae_ckpt,
                  seg_ckpt, out_dir, *, steps=None, guidance=None, seed=0,
                  log=print) -> dict:
    """Palette-mask conditioned part segmentation; labels at face centers."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vae = load_vae(config, vae_ckpt)
    dit, _kind = load_dit(config, seg_ckpt)
    scene = prepare_scene([mesh_path], config, vae, seed, with_colors=False)
    mesh = scene.meshes[0]
    mask_image = np.asarray(Image.open(mask_path).convert("RGBA"))
    allowed = mask_palette_labels(mask_image)
    latents = run_sampler(scene, dit, mask_path, config, steps=steps,
                          guidance=guidance, seed=seed)
    centers = mesh.face_centers().astype(np.float32)
    colors = decode_colors(vae, latents, centers)
    labels = palette_to_labels(colors, allowed=allowed)

    labels_path = out_dir / f"{Path(mesh_path).stem}_labels.bin"
    labels_path.write_bytes(labels.astype(np.uint8).tobytes())

    # preview mesh: vertices duplicated per face so every face shows its label color
    face_colors = PART_PALETTE[labels]
    tri = scene.record.invert(mesh.vertices)[mesh.faces].reshape(-1, 3)
    tri_n = mesh.vertex_normals[mesh.faces].reshape(-1, 3)
    tri_c = np.repeat(face_colors, 3, axis=0)
    preview_path = out_dir / f"{Path(mesh_path).stem}_segments.ply"
    _write_face_preview(preview_path, tri, tri_n, tri_c)
    return {"labels": str(labels_path), "preview": str(preview_path),
            "n_labels": int(len(np.unique(labels))),
            "allowed_labels": [int(a) for a in allowed]}


def _write_face_preview(path, verts, normals, colors):
    from ..geom.meshio import write_mesh_ply
    faces = np.arange(len(verts), dtype=np.int32).reshape(-1, 3)
    lengths = np.linalg.norm(normals, axis=1, keepdims=True)
    normals = normals / np.maximum(lengths, 1e-30)
    mesh = TexturedMesh(verts, faces, normals)
    write_mesh_ply(path, mesh, vertex_colors=colors)


def texture_parts(part_paths, image_path, config: PipelineConfig, vae_ckpt,
                  dit_ckpt, out_dir, *, steps=None, guidance=None, seed=0,
                  output_mode=None, log=print) -> dict:
    """Texture several part meshes in one shared frame with a single sample.

    Parts share one normalization record and one conditioning geometry;
    occluded inter-part surfaces receive colors like any other query.
    """
    if not part_paths:
        raise ParameterError("texture_parts needs at least one part mesh")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vae = load_vae(config, vae_ckpt)
    dit, _kind = load_dit(config, dit_ckpt)
    scene = prepare_scene(list(part_paths), config, vae, seed, with_colors=False)
    latents = run_sampler(scene, dit, image_path, config, steps=steps,
                          guidance=guidance, seed=seed)
    mode = output_mode or config.inference.output_mode
    outputs = []
    for i, (mesh, src) in enumerate(zip(scene.meshes, part_paths)):
        part_mode = mode if (mesh.uv is not None or mode == "vertex") else "vertex"
        files = _bake_outputs(vae, latents, mesh, scene.record, out_dir,
                              f"{Path(src).stem}_part{i}", part_mode, config)
        outputs.append(files)
    return {"parts": outputs, "normalization": scene.record.to_dict()}


def sample_colors_for_asset(config: PipelineConfig, vae: ColorVAE, dit: ColorDiT,
                            store, asset_id: str, probe_positions: np.ndarray,
                            steps=None, guidance=None, seed=0,
                            unconditional: bool = False,
                            control_colors: Optional[np.ndarray] = None,
                            tokens: Optional[int] = None) -> np.ndarray:
    """Sample latents for a dataset asset and decode at probe positions.

    Used by the generation evaluation protocol and the acceptance suite.
    `control_colors` (aligned with the asset cloud) enables color control.
    """
    pos, nrm, col = store.cloud(asset_id)
    rng = np.random.default_rng(substream(seed, f"gen-{asset_id}"))
    ctx = rng.choice(len(pos), size=min(config.vae.context_points, len(pos)),
                     replace=False)
    l_infer = tokens or config.inference.l_infer
    qp, qn, _ = select_queries(pos[ctx], nrm[ctx], min(l_infer, len(ctx)),
                               seed=substream(seed, f"gen-q-{asset_id}"))
    with torch.no_grad():
        geo = vae.encode_geometry(torch.from_numpy(pos[ctx])[None],
                                  torch.from_numpy(nrm[ctx])[None],
                                  torch.from_numpy(qp)[None],
                                  torch.from_numpy(qn)[None])
        control = None
        if control_colors is not None:
            post = vae.encode_color(torch.from_numpy(pos[ctx])[None],
                                    torch.from_numpy(nrm[ctx])[None],
                                    torch.from_numpy(
                                        control_colors[ctx].astype(np.float32))[None],
                                    geo, check_anchors=False)
            control = reparameterize(post, deterministic=True)
        image_tokens = None
        if not unconditional:
            image_tokens = dit.encode_condition_image(
                store.condition_image(asset_id, "condA"))
        bundle = ConditionBundle(geo=geo, image_tokens=image_tokens,
                                 color_control=control,
                                 drop_image=unconditional, drop_color=unconditional)
        gen = torch.Generator().manual_seed(substream(seed, f"gen-noise-{asset_id}"))
        latents = flow_sample(dit, bundle, steps=steps or config.inference.steps,
                              guidance=config.inference.guidance
                              if guidance is None else guidance, generator=gen)
    return decode_colors(vae, latents, probe_positions)
