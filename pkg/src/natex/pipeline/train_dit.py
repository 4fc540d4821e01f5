"""DiT training for the four modes: texture, material, segmentation, refine.

Targets and color controls are VAE encodings (deterministic posterior mean)
precomputed into a small per-asset pool of query draws; condition images stay
raw patches so the trainable patch embedding sees gradients. Non-texture
modes fine-tune from the texture checkpoint.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from ..dit.model import ColorDiT
from ..dit.training import DiTBatch, PlateauDetector, train_step
from ..errors import DataError, NumericError
from ..seeding import substream
from ..vae.model import ColorLatentSet, ColorVAE, GeoLatentSet, reparameterize, select_queries
from .checkpoint import (CheckpointArchive, module_to_tensors, optimizer_to_tensors,
                         tensors_to_module, tensors_to_optimizer)
from .config import PipelineConfig
from .data import AssetStore, lr_at, open_dataset

MODES = ("texture", "material", "segmentation", "refine")


def corrupt_half_space(positions: np.ndarray, colors: np.ndarray,
                       seed: int) -> np.ndarray:
    """Zero the colors of all points on one side of a random plane."""
    rng = np.random.default_rng(seed)
    normal = rng.normal(size=3)
    normal /= np.linalg.norm(normal)
    offset = rng.uniform(-0.3, 0.3)
    out = colors.copy()
    out[positions @ normal > offset] = 0.0
    return out


@dataclass
class _PoolEntry:
    x0: np.ndarray            # (L, d_color) target latents
    geo_tokens: np.ndarray    # (L, d_geo)
    anchors: np.ndarray       # (L, 3)
    anchor_normals: np.ndarray
    control: Optional[np.ndarray]  # (L, d_color) color-control latents


def _encode_latents(vae: ColorVAE, pos, nrm, colors, anchors_pos, anchors_nrm):
    with torch.no_grad():
        geo = vae.encode_geometry(torch.from_numpy(pos)[None],
                                  torch.from_numpy(nrm)[None],
                                  torch.from_numpy(anchors_pos)[None],
                                  torch.from_numpy(anchors_nrm)[None])
        post = vae.encode_color(torch.from_numpy(pos)[None],
                                torch.from_numpy(nrm)[None],
                                torch.from_numpy(colors)[None], geo,
                                check_anchors=False)
        lat = reparameterize(post, deterministic=True)
    return geo, lat


def _build_pool(vae: ColorVAE, store: AssetStore, asset_id: str, mode: str,
                cfg: PipelineConfig, log) -> list[_PoolEntry]:
    pos, nrm, col = store.cloud(asset_id)
    material = store.material_colors(asset_id)
    if mode == "material" and material is None:
        raise DataError(f"asset {asset_id} has no material channels; "
                        "regenerate the dataset with material_mode != none")
    entries = []
    master = cfg.seeds.master
    for e in range(cfg.dit.encode_pool):
        seed = substream(master, f"dit-enc-{mode}-{asset_id}-{e}")
        rng = np.random.default_rng(seed)
        ctx = rng.choice(len(pos), size=min(cfg.vae.context_points, len(pos)),
                         replace=False)
        a_pos, a_nrm, _ = select_queries(pos[ctx], nrm[ctx],
                                         min(cfg.dataset.l_train, len(ctx)), seed)
        target_colors = material[ctx] if mode == "material" else col[ctx]
        geo, target = _encode_latents(vae, pos[ctx], nrm[ctx], target_colors,
                                      a_pos, a_nrm)
        control = None
        if mode == "material":
            _, albedo = _encode_latents(vae, pos[ctx], nrm[ctx], col[ctx],
                                        a_pos, a_nrm)
            control = albedo.tokens[0].numpy()
        elif mode == "refine":
            corrupted = corrupt_half_space(pos[ctx], col[ctx],
                                           seed=substream(seed, "corrupt"))
            _, ctrl = _encode_latents(vae, pos[ctx], nrm[ctx], corrupted,
                                      a_pos, a_nrm)
            control = ctrl.tokens[0].numpy()
        entries.append(_PoolEntry(x0=target.tokens[0].numpy(),
                                  geo_tokens=geo.tokens[0].numpy(),
                                  anchors=a_pos, anchor_normals=a_nrm,
                                  control=control))
    return entries


def _stack_images(patch_list, d_patch):
    """Pad variable-length patch sets to a common T; returns arrays + mask."""
    t_max = max(p.shape[0] for p in patch_list)
    out = np.zeros((len(patch_list), t_max, d_patch), dtype=np.float32)
    mask = np.zeros((len(patch_list), t_max), dtype=bool)
    grids = []
    for i, p in enumerate(patch_list):
        out[i, :p.shape[0]] = p
        mask[i, :p.shape[0]] = True
    return out, mask, grids


def train_dit(config: PipelineConfig, mode: str, out_dir, vae_ckpt,
              init_ckpt=None, resume=None, log=print) -> dict:
    """Train (or fine-tune) the DiT for one mode; returns artifact paths."""
    if mode not in MODES:
        raise DataError(f"unknown DiT mode '{mode}' (expected one of {MODES})")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest, store = open_dataset(config.dataset.root)
    train_ids = [a["id"] for a in manifest.split("train")]
    if not train_ids:
        raise DataError("dataset has no training assets")

    master = config.seeds.master
    cfg_hash = config.config_hash()

    vae = ColorVAE(config.vae_model_config())
    arch = CheckpointArchive.load(vae_ckpt, expected_config_hash=cfg_hash)
    tensors_to_module(vae, arch.tensors, "vae")
    vae.eval()
    for p in vae.parameters():
        p.requires_grad_(False)

    torch.manual_seed(substream(master, f"dit-init-{mode}"))
    model = ColorDiT(config.dit_model_config())
    if mode != "texture" and resume is None:
        if init_ckpt is None:
            raise DataError(f"mode '{mode}' fine-tunes from the texture checkpoint; "
                            "pass init_ckpt")
        base = CheckpointArchive.load(init_ckpt, expected_config_hash=cfg_hash)
        tensors_to_module(model, base.tensors, "dit.texture")
        log(f"initialized {mode} DiT from texture checkpoint")

    opt = torch.optim.Adam(model.parameters(), lr=config.dit.lr)
    plateau = PlateauDetector(config.dit.plateau_window, config.dit.plateau_threshold)
    start_step = 0
    if resume is not None:
        arch = CheckpointArchive.load(resume, expected_config_hash=cfg_hash)
        tensors_to_module(model, arch.tensors, f"dit.{mode}")
        tensors_to_optimizer(opt, arch.tensors, arch.train_state["optimizer"],
                             "opt.dit")
        plateau.load_state(arch.train_state["plateau"])
        start_step = int(arch.train_state["step"])
        log(f"resumed {mode} DiT from step {start_step}")

    log(f"precomputing latent pool ({len(train_ids)} assets x "
        f"{config.dit.encode_pool})")
    t0 = time.time()
    pools = {a: _build_pool(vae, store, a, mode, config, log) for a in train_ids}
    patches = {a: store.condition_patches(a, config.dit.image_res,
                                          config.dit.patch_size)
               for a in train_ids}
    log(f"pool ready in {time.time() - t0:.0f}s")

    ckpt_path = out_dir / f"dit_{mode}.ckpt"
    curve_path = out_dir / f"dit_{mode}_loss.csv"
    curve_rows = [] if start_step == 0 or not curve_path.exists() else \
        curve_path.read_text().splitlines()[1:]

    def save(step):
        tensors = module_to_tensors(model, f"dit.{mode}")
        opt_tensors, opt_meta = optimizer_to_tensors(opt, "opt.dit")
        tensors.update(opt_tensors)
        CheckpointArchive(tensors=tensors,
                          train_state={"step": step, "kind": f"dit.{mode}",
                                       "optimizer": opt_meta,
                                       "plateau": plateau.state()},
                          config_hash=cfg_hash).save(ckpt_path)

    d = config.dit
    d_patch = d.patch_size * d.patch_size * 3
    has_control = mode in ("material", "refine")
    t_start = time.time()
    for step in range(start_step, d.steps):
        lr = lr_at(step, d.steps, d.lr, d.lr_final, d.warmup_steps, d.decay_at)
        for group in opt.param_groups:
            group["lr"] = lr
        rng = np.random.default_rng(substream(master, f"dit-step-{mode}-{step}"))
        chosen = rng.choice(len(train_ids), size=d.batch_size, replace=True)
        entries = []
        pa_list, pb_list, ga_list, gb_list = [], [], [], []
        for ai in chosen:
            asset_id = train_ids[ai]
            pool = pools[asset_id]
            entries.append(pool[rng.integers(0, len(pool))])
            pa, ga, pb, gb = patches[asset_id]
            pa_list.append(pa)
            pb_list.append(pb)
            ga_list.append(ga)
            gb_list.append(gb)

        x0 = torch.from_numpy(np.stack([e.x0 for e in entries]))
        geo = GeoLatentSet(
            tokens=torch.from_numpy(np.stack([e.geo_tokens for e in entries])),
            anchor_positions=torch.from_numpy(np.stack([e.anchors for e in entries])),
            anchor_normals=torch.from_numpy(
                np.stack([e.anchor_normals for e in entries])))
        img_a_np, mask_np, _ = _stack_images(pa_list, d_patch)
        img_b_np, _, _ = _stack_images(pb_list, d_patch)
        img_a = _embed_patches(model, ga_list, img_a_np)
        img_b = _embed_patches(model, gb_list, img_b_np)
        control = None
        if has_control:
            control = ColorLatentSet(
                tokens=torch.from_numpy(np.stack([e.control for e in entries])),
                anchor_positions=geo.anchor_positions)
        batch = DiTBatch(x0=x0, geo=geo, image_a=img_a, image_b=img_b,
                         image_mask=torch.from_numpy(mask_np),
                         color_control=control)
        illum_on = plateau.plateaued and d.gamma_illum > 0
        gen = torch.Generator().manual_seed(substream(master,
                                                      f"dit-noise-{mode}-{step}"))
        report = train_step(model, opt, batch, gamma_illum=d.gamma_illum,
                            drop_prob=d.cfg_drop_prob, illum_enabled=illum_on,
                            generator=gen)
        if report["aborted"]:
            raise NumericError(f"non-finite DiT loss at step {step}")
        plateau.update(report["base"])
        curve_rows.append(f"{step},{lr:.3e},{report['total']:.6f},"
                          f"{report['base']:.6f},{report['invariance']:.6f},"
                          f"{int(report['illum_active'])}")
        if (step + 1) % max(1, d.steps // 10) == 0:
            log(f"{mode} step {step + 1}/{d.steps} base={report['base']:.5f} "
                f"illum={report['illum_active']} ({time.time() - t_start:.0f}s)")
        if d.checkpoint_every and (step + 1) % d.checkpoint_every == 0:
            save(step + 1)

    save(d.steps)
    curve_path.write_text("step,lr,total,base,invariance,illum_active\n"
                          + "\n".join(curve_rows) + "\n")
    log(f"{mode} DiT training done in {time.time() - t_start:.0f}s -> {ckpt_path}")
    return {"checkpoint": str(ckpt_path), "loss_curve": str(curve_path)}


def _embed_patches(model: ColorDiT, grids, padded: np.ndarray) -> torch.Tensor:
    """Apply the trainable patch embedding + fixed 2D positions per item."""
    from ..dit.model import sincos_position_grid
    dtype = model.patch_embed.weight.dtype
    tok = model.patch_embed(torch.from_numpy(padded).to(dtype))
    pos_pad = torch.zeros_like(tok)
    for i, (gh, gw) in enumerate(grids):
        pos_pad[i, :gh * gw] = sincos_position_grid(gh, gw, model.cfg.d_img).to(dtype)
    return tok + pos_pad
