"""VAE training loop: resumable, seeded statelessly per step."""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np
import torch

from ..errors import DataError, NumericError
from ..geom.sampling import ColorPointCloud, offset_near_surface
from ..seeding import substream
from ..vae.losses import vae_loss
from ..vae.model import ColorVAE, reparameterize, select_queries
from .checkpoint import (CheckpointArchive, module_to_tensors, optimizer_to_tensors,
                         tensors_to_module, tensors_to_optimizer)
from .config import PipelineConfig
from .data import AssetStore, lr_at, open_dataset
from .evaluate import psnr


def _batch_items(store: AssetStore, asset_ids, cfg: PipelineConfig, step: int,
                 master: int):
    """Assemble one training batch of context clouds, anchors and query targets."""
    v = cfg.vae
    rng = np.random.default_rng(substream(master, f"vae-step-{step}"))
    chosen = rng.choice(len(asset_ids), size=v.batch_size, replace=True)
    ctx_p, ctx_n, ctx_c, q_pos, q_nrm = [], [], [], [], []
    dq_pos, dq_col, dq_occ = [], [], []
    for slot, ai in enumerate(chosen):
        asset_id = asset_ids[ai]
        pos, nrm, col = store.cloud(asset_id)
        colors = col
        if v.include_material_clouds and rng.random() < 0.25:
            mat = store.material_colors(asset_id)
            if mat is not None:
                colors = mat
        n = len(pos)
        ctx_idx = rng.choice(n, size=min(v.context_points, n), replace=False)
        anchors_pos, anchors_nrm, _ = select_queries(
            pos[ctx_idx], nrm[ctx_idx], min(cfg.dataset.l_train, len(ctx_idx)),
            seed=substream(master, f"vae-anchor-{step}-{slot}"))
        dq_idx = rng.choice(n, size=min(v.query_points, n), replace=False)
        sub = ColorPointCloud(pos[dq_idx].astype(np.float64),
                              nrm[dq_idx].astype(np.float64),
                              colors[dq_idx].astype(np.float64),
                              dq_idx.astype(np.int64))
        queries = offset_near_surface(sub, gamma=v.gamma_offset, frac=v.near_frac,
                                      seed=substream(master, f"vae-off-{step}-{slot}"),
                                      bvh=store.bvh(asset_id), trunc_s=v.udf_trunc)
        ctx_p.append(pos[ctx_idx])
        ctx_n.append(nrm[ctx_idx])
        ctx_c.append(colors[ctx_idx])
        q_pos.append(anchors_pos)
        q_nrm.append(anchors_nrm)
        dq_pos.append(queries.positions.astype(np.float32))
        dq_col.append(queries.target_colors.astype(np.float32))
        dq_occ.append(queries.target_occupancy.astype(np.float32))

    def stack(parts):
        return torch.from_numpy(np.stack(parts))

    return (stack(ctx_p), stack(ctx_n), stack(ctx_c), stack(q_pos), stack(q_nrm),
            stack(dq_pos), stack(dq_col), stack(dq_occ))


def _heldout_psnr(model: ColorVAE, store: AssetStore, heldout_ids, cfg: PipelineConfig,
                  max_assets: int = 4, n_points: int = 2048) -> float:
    if not heldout_ids:
        return float("nan")
    vals = []
    with torch.no_grad():
        for asset_id in heldout_ids[:max_assets]:
            pos, nrm, col = store.cloud(asset_id)
            seed = substream(cfg.seeds.master, f"vae-eval-{asset_id}")
            rng = np.random.default_rng(seed)
            ctx = rng.choice(len(pos), size=min(cfg.vae.context_points, len(pos)),
                             replace=False)
            qp, qn, _ = select_queries(pos[ctx], nrm[ctx],
                                       min(cfg.dataset.l_train, len(ctx)), seed)
            probe = rng.choice(len(pos), size=min(n_points, len(pos)), replace=False)
            _, _, _, field = model.encode_decode(
                torch.from_numpy(pos[ctx])[None], torch.from_numpy(nrm[ctx])[None],
                torch.from_numpy(col[ctx])[None], torch.from_numpy(qp)[None],
                torch.from_numpy(qn)[None], torch.from_numpy(pos[probe])[None],
                deterministic=True)
            mse = float(((field.rgb[0].numpy() - col[probe]) ** 2).mean())
            vals.append(psnr(mse))
    return float(np.mean(vals))


def train_vae(config: PipelineConfig, out_dir, resume=None, log=print) -> dict:
    """Train the color VAE on the configured dataset; returns artifact paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest, store = open_dataset(config.dataset.root)
    train_ids = [a["id"] for a in manifest.split("train")]
    heldout_ids = [a["id"] for a in manifest.split("heldout")]
    if not train_ids:
        raise DataError("dataset has no training assets")

    master = config.seeds.master
    cfg_hash = config.config_hash()
    torch.manual_seed(substream(master, "vae-init"))
    model = ColorVAE(config.vae_model_config())
    opt = torch.optim.Adam(model.parameters(), lr=config.vae.lr)

    start_step = 0
    if resume is not None:
        arch = CheckpointArchive.load(resume, expected_config_hash=cfg_hash)
        tensors_to_module(model, arch.tensors, "vae")
        tensors_to_optimizer(opt, arch.tensors, arch.train_state["optimizer"], "opt.vae")
        start_step = int(arch.train_state["step"])
        log(f"resumed VAE from step {start_step}")

    ckpt_path = out_dir / "vae.ckpt"
    curve_path = out_dir / "vae_loss.csv"
    eval_path = out_dir / "vae_eval.csv"
    curve_rows = [] if start_step == 0 or not curve_path.exists() else \
        curve_path.read_text().splitlines()[1:]
    eval_rows = [] if start_step == 0 or not eval_path.exists() else \
        eval_path.read_text().splitlines()[1:]

    def save(step):
        tensors = module_to_tensors(model, "vae")
        opt_tensors, opt_meta = optimizer_to_tensors(opt, "opt.vae")
        tensors.update(opt_tensors)
        CheckpointArchive(tensors=tensors,
                          train_state={"step": step, "kind": "vae",
                                       "optimizer": opt_meta},
                          config_hash=cfg_hash).save(ckpt_path)

    v = config.vae
    bad_streak = 0
    t_start = time.time()
    for step in range(start_step, v.steps):
        lr = lr_at(step, v.steps, v.lr, v.lr_final, v.warmup_steps, v.decay_at)
        for group in opt.param_groups:
            group["lr"] = lr
        (cp, cn, cc, qp, qn, dp, dc, do) = _batch_items(store, train_ids, config,
                                                        step, master)
        gen = torch.Generator().manual_seed(substream(master, f"vae-reparam-{step}"))
        geo = model.encode_geometry(cp, cn, qp, qn)
        posterior = model.encode_color(cp, cn, cc, geo, check_anchors=False)
        latents = reparameterize(posterior, generator=gen)
        field = model.decode(latents, dp)
        total, comps = vae_loss(field, dc, do, posterior,
                                v.lambda_kl, v.lambda_color, v.lambda_udf)

        total_val = float(total.detach())
        if not torch.isfinite(total):
            bad_streak += 1
            log(f"step {step}: non-finite loss ({bad_streak}/3)")
            if bad_streak >= 3:
                dump = out_dir / "vae_diagnostics.json"
                dump.write_text(str({"step": step, "components": comps}))
                save(step)
                raise NumericError(f"3 consecutive non-finite losses; see {dump}")
            continue
        bad_streak = 0
        opt.zero_grad(set_to_none=True)
        total.backward()
        opt.step()

        curve_rows.append(f"{step},{lr:.3e},{total_val:.6f},"
                          f"{comps['kl']:.6f},{comps['color']:.6f},{comps['udf']:.6f}")
        if v.eval_every and (step + 1) % v.eval_every == 0:
            val = _heldout_psnr(model, store, heldout_ids, config)
            eval_rows.append(f"{step},{val:.3f}")
            log(f"step {step + 1}/{v.steps} loss={total_val:.5f} "
                f"color={comps['color']:.5f} heldout_psnr={val:.2f}dB "
                f"({time.time() - t_start:.0f}s)")
        if v.checkpoint_every and (step + 1) % v.checkpoint_every == 0:
            save(step + 1)

    save(v.steps)
    curve_path.write_text("step,lr,total,kl,color,udf\n" + "\n".join(curve_rows) + "\n")
    eval_path.write_text("step,heldout_psnr\n" + "\n".join(eval_rows) + "\n")
    log(f"VAE training done in {time.time() - t_start:.0f}s -> {ckpt_path}")
    return {"checkpoint": str(ckpt_path), "loss_curve": str(curve_path),
            "eval_curve": str(eval_path)}
