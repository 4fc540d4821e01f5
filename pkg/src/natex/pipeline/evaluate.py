"""Evaluation protocols and the metrics report.

PSNR convention: colors in [0,1], PSNR = 10 log10(1 / MSE), capped at 80 dB
for MSE below 1e-8. Point-cloud metrics compare decoded colors at ground
truth positions; rendered metrics compare the six orthogonal splat views.
A mean-color baseline row anchors every report.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..errors import DataError
from ..geom.render import six_orthogonal_views, splat_render
from ..geom.sampling import ColorPointCloud
from ..seeding import substream

PSNR_CAP = 80.0


def psnr(mse: float) -> float:
    if mse < 1e-8:
        return PSNR_CAP
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP)


@dataclass
class MetricsReport:
    protocol: str
    config_hash: str
    per_asset: list = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)
    wall_clock_s: float = 0.0

    def to_dict(self) -> dict:
        return {"protocol": self.protocol, "config_hash": self.config_hash,
                "per_asset": self.per_asset, "aggregate": self.aggregate,
                "wall_clock_s": self.wall_clock_s}

    def write(self, path) -> None:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1))
        txt = [f"protocol: {self.protocol}   config: {self.config_hash}   "
               f"wall: {self.wall_clock_s:.1f}s"]
        if self.per_asset:
            keys = [k for k in self.per_asset[0] if k != "id"]
            txt.append("id      " + "  ".join(f"{k:>18}" for k in keys))
            for row in self.per_asset:
                txt.append(row["id"] + "  " +
                           "  ".join(f"{row[k]:>18.4f}" if isinstance(row[k], float)
                                     else f"{row[k]:>18}" for k in keys))
        txt.append("aggregate: " + json.dumps(self.aggregate, sort_keys=True))
        path.with_suffix(".txt").write_text("\n".join(txt) + "\n")


def _rendered_psnr(positions, normals, gt_colors, pred_colors, size: int) -> float:
    """Mean PSNR over the six orthogonal views of GT vs predicted splats."""
    src = ColorPointCloud(positions.astype(np.float64), normals.astype(np.float64),
                          np.clip(gt_colors, 0, 1).astype(np.float64),
                          np.zeros(len(positions), dtype=np.int64))
    pred = ColorPointCloud(positions.astype(np.float64), normals.astype(np.float64),
                           np.clip(pred_colors, 0, 1).astype(np.float64),
                           np.zeros(len(positions), dtype=np.int64))
    vals = []
    for cam in six_orthogonal_views():
        a = splat_render(src, cam, None, size).astype(np.float64) / 255.0
        b = splat_render(pred, cam, None, size).astype(np.float64) / 255.0
        covered = (a[..., 3] > 0) | (b[..., 3] > 0)
        if not covered.any():
            continue
        mse = float(((a[..., :3] - b[..., :3])[covered] ** 2).mean())
        vals.append(psnr(mse))
    return float(np.mean(vals)) if vals else float("nan")


def _decode_at(model, pos, nrm, col, l_tokens: int, probe_pos, seed: int,
               context_points: int = 1024):
    """Encode (context-limited) and decode at probe positions; deterministic."""
    from ..vae.model import reparameterize, select_queries
    rng = np.random.default_rng(seed)
    ctx = rng.choice(len(pos), size=min(len(pos), max(l_tokens * 2, context_points)),
                     replace=False)
    qp, qn, _ = select_queries(pos[ctx], nrm[ctx], min(l_tokens, len(ctx)), seed)
    with torch.no_grad():
        geo = model.encode_geometry(torch.from_numpy(pos[ctx])[None],
                                    torch.from_numpy(nrm[ctx])[None],
                                    torch.from_numpy(qp)[None],
                                    torch.from_numpy(qn)[None])
        posterior = model.encode_color(torch.from_numpy(pos[ctx])[None],
                                       torch.from_numpy(nrm[ctx])[None],
                                       torch.from_numpy(col[ctx])[None], geo,
                                       check_anchors=False)
        latents = reparameterize(posterior, deterministic=True)
        field = model.decode(latents, torch.from_numpy(probe_pos)[None])
    return field.rgb[0].numpy()


def evaluate(config, vae_model, store, heldout_ids, protocol: str,
             dit_model=None, sampler_kwargs=None, log=print) -> MetricsReport:
    """Run the reconstruction or generation protocol over heldout assets."""
    t0 = time.time()
    report = MetricsReport(protocol=protocol, config_hash=config.config_hash())
    if not heldout_ids:
        raise DataError("heldout split is empty")
    master = config.seeds.master
    n_probe = config.eval.n_eval_points
    agg: dict = {}

    for asset_id in heldout_ids:
        pos, nrm, col = store.cloud(asset_id)
        rng = np.random.default_rng(substream(master, f"eval-probe-{asset_id}"))
        probe = rng.choice(len(pos), size=min(n_probe, len(pos)), replace=False)
        row: dict = {"id": asset_id}

        mean_color = col.mean(axis=0, keepdims=True)
        base_mse = float(((col[probe] - mean_color) ** 2).mean())
        row["baseline_psnr"] = psnr(base_mse)

        if protocol == "reconstruction":
            for l_tokens in config.eval.latent_sizes:
                pred = _decode_at(vae_model, pos, nrm, col, l_tokens, pos[probe],
                                  seed=substream(master, f"eval-{asset_id}-{l_tokens}"),
                                  context_points=config.vae.context_points)
                mse = float(((pred - col[probe]) ** 2).mean())
                row[f"psnr_L{l_tokens}"] = psnr(mse)
                row[f"mae_L{l_tokens}"] = float(np.abs(pred - col[probe]).mean())
                row[f"rendered_psnr_L{l_tokens}"] = _rendered_psnr(
                    pos[probe], nrm[probe], col[probe], pred,
                    config.eval.render_views_size)
        elif protocol == "generation":
            if dit_model is None:
                raise DataError("generation protocol requires a DiT checkpoint")
            from .inference import sample_colors_for_asset
            pred = sample_colors_for_asset(config, vae_model, dit_model, store,
                                           asset_id, pos[probe],
                                           **(sampler_kwargs or {}))
            mse = float(((pred - col[probe]) ** 2).mean())
            row["psnr"] = psnr(mse)
            row["mae"] = float(np.abs(pred - col[probe]).mean())
            row["rendered_psnr"] = _rendered_psnr(pos[probe], nrm[probe], col[probe],
                                                  pred, config.eval.render_views_size)
        else:
            raise DataError(f"unknown evaluation protocol '{protocol}'")
        report.per_asset.append(row)
        log(f"eval {asset_id}: " + ", ".join(f"{k}={v:.2f}" for k, v in row.items()
                                             if isinstance(v, float)))

    for key in report.per_asset[0]:
        if key == "id":
            continue
        agg[f"mean_{key}"] = float(np.mean([r[key] for r in report.per_asset]))
    report.aggregate = agg
    report.wall_clock_s = time.time() - t0
    return report
