"""Multi-control rectified-flow diffusion transformer over color latent sets.

Conditioning, per token i: the geometry latent anchored at the same query
point is concatenated along channels (native geometry control), RoPE over
anchor positions drives self-attention, image tokens enter via
cross-attention, and an optional color-control latent fills the last channel
slot. Geometry is never dropped under CFG; image and color control are.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
from PIL import Image

from ..errors import ConfigError, ContractViolationError, EmptyConditionError, NumericError
from ..nn.blocks import AdaLNDiTBlock, AttentionBlockConfig, TimestepEmbed
from ..vae.model import ColorLatentSet, GeoLatentSet


@dataclass(frozen=True)
class DiTConfig:
    depth: int = 8
    width: int = 240
    heads: int = 4
    d_color: int = 8
    d_geo: int = 8
    d_img: int = 256
    patch_size: int = 8
    image_res: int = 128
    cfg_drop_prob: float = 0.1
    gamma_illum: float = 5.0

    def __post_init__(self):
        if not 0.0 <= self.cfg_drop_prob <= 1.0:
            raise ConfigError("cfg_drop_prob must be in [0,1]")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("depth", "width", "heads", "d_color", "d_geo", "d_img",
                 "patch_size", "image_res", "cfg_drop_prob", "gamma_illum")}


@dataclass
class ConditionBundle:
    """All conditioning for one forward pass. Geometry latents are mandatory."""

    geo: GeoLatentSet
    image_tokens: Optional[torch.Tensor] = None    # (B, T, d_img)
    image_mask: Optional[torch.Tensor] = None      # (B, T) bool, True = real token
    color_control: Optional[ColorLatentSet] = None
    drop_image: bool = False
    drop_color: bool = False

    def dropped(self) -> "ConditionBundle":
        """Unconditional variant for CFG: image and color control dropped."""
        return replace(self, drop_image=True, drop_color=True)


def prepare_condition_patches(image: np.ndarray, image_res: int, patch_size: int):
    """Crop to the alpha mask, resize longest side, patchify.

    Returns (patches (T, patch*patch*3) float32 in [0,1], grid (gh, gw)).
    Raises EmptyConditionError when the mask is empty.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 4:
        raise EmptyConditionError("condition image must be RGBA")
    alpha = image[:, :, 3] > 0
    if not alpha.any():
        raise EmptyConditionError("condition image mask is empty")
    rows = np.nonzero(alpha.any(axis=1))[0]
    cols = np.nonzero(alpha.any(axis=0))[0]
    crop = image[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1]
    mask = crop[:, :, 3:4] > 0
    rgb = (crop[:, :, :3] * mask).astype(np.uint8)

    h, w = rgb.shape[:2]
    scale = image_res / max(h, w)
    nh = max(1, int(round(h * scale)))
    nw = max(1, int(round(w * scale)))
    resized = np.asarray(Image.fromarray(rgb).resize((nw, nh), Image.BILINEAR),
                         dtype=np.float32) / 255.0

    gh = (nh + patch_size - 1) // patch_size
    gw = (nw + patch_size - 1) // patch_size
    padded = np.zeros((gh * patch_size, gw * patch_size, 3), dtype=np.float32)
    padded[:nh, :nw] = resized
    patches = padded.reshape(gh, patch_size, gw, patch_size, 3)
    patches = patches.transpose(0, 2, 1, 3, 4).reshape(gh * gw, -1)
    return patches, (gh, gw)


def sincos_position_grid(gh: int, gw: int, dim: int) -> torch.Tensor:
    """Fixed 2D sinusoidal positions for a (gh, gw) patch grid, width dim."""
    half = dim // 2

    def ladder(n, d):
        pos = torch.arange(n, dtype=torch.float64)
        omega = torch.exp(-np.log(10000.0) * torch.arange(d // 2, dtype=torch.float64)
                          / max(d // 2 - 1, 1))
        ang = pos[:, None] * omega
        return torch.cat([ang.sin(), ang.cos()], dim=1)  # (n, d)

    rows = ladder(gh, half)[:, None, :].expand(gh, gw, half)
    cols = ladder(gw, dim - half)[None, :, :].expand(gh, gw, dim - half)
    return torch.cat([rows, cols], dim=-1).reshape(gh * gw, dim)


def assemble_tokens(x_t: torch.Tensor, bundle: ConditionBundle):
    """Per-token channel concat [x_t | geometry | color-control].

    Dropped or absent color control contributes zeros; anchors come from the
    geometry latents (they drive RoPE). Raises on anchor/length mismatch.
    """
    geo = bundle.geo
    if x_t.shape[:2] != geo.tokens.shape[:2]:
        raise ContractViolationError(
            f"noisy latents {tuple(x_t.shape[:2])} vs geometry {tuple(geo.tokens.shape[:2])}")
    parts = [x_t, geo.tokens.to(x_t.dtype)]
    if bundle.color_control is not None and not bundle.drop_color:
        cc = bundle.color_control
        if cc.tokens.shape[:2] != x_t.shape[:2]:
            raise ContractViolationError("color control length mismatch")
        if not torch.allclose(cc.anchor_positions.to(x_t.dtype),
                              geo.anchor_positions.to(x_t.dtype), atol=1e-5):
            raise ContractViolationError("color control anchors differ from geometry anchors")
        parts.append(cc.tokens.to(x_t.dtype))
    else:
        d_c = x_t.shape[-1]
        parts.append(torch.zeros_like(x_t[..., :d_c]))
    return torch.cat(parts, dim=-1), geo.anchor_positions


class ColorDiT(nn.Module):
    def __init__(self, cfg: DiTConfig):
        super().__init__()
        self.cfg = cfg
        block_cfg = AttentionBlockConfig(width=cfg.width, heads=cfg.heads)
        in_ch = cfg.d_color + cfg.d_geo + cfg.d_color
        self.in_proj = nn.Linear(in_ch, cfg.width)
        self.t_embed = TimestepEmbed(cfg.width)
        self.patch_embed = nn.Linear(cfg.patch_size * cfg.patch_size * 3, cfg.d_img)
        self.null_image_token = nn.Parameter(torch.randn(1, 1, cfg.d_img) * 0.02)
        self.blocks = nn.ModuleList(AdaLNDiTBlock(block_cfg, context_width=cfg.d_img)
                                    for _ in range(cfg.depth))
        self.final_mod = nn.Sequential(nn.SiLU(), nn.Linear(cfg.width, 2 * cfg.width))
        self.ln_final = nn.LayerNorm(cfg.width, elementwise_affine=False)
        self.head = nn.Linear(cfg.width, cfg.d_color)
        nn.init.zeros_(self.final_mod[1].weight)
        nn.init.zeros_(self.final_mod[1].bias)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)
        self.eval_count = 0  # velocity evaluations, for instrumentation

    def encode_condition_image(self, image: np.ndarray) -> torch.Tensor:
        """Image -> (1, T, d_img) tokens: learned patch embed + fixed 2D positions."""
        patches, (gh, gw) = prepare_condition_patches(
            image, self.cfg.image_res, self.cfg.patch_size)
        dtype = self.patch_embed.weight.dtype
        tok = self.patch_embed(torch.from_numpy(patches).to(dtype))
        pos = sincos_position_grid(gh, gw, self.cfg.d_img).to(dtype)
        return (tok + pos)[None]

    def _context(self, bundle: ConditionBundle, batch: int, dtype: torch.dtype):
        if bundle.image_tokens is None or bundle.drop_image:
            return self.null_image_token.to(dtype).expand(batch, 1, -1), None
        return bundle.image_tokens.to(dtype), bundle.image_mask

    def forward(self, x_t: torch.Tensor, t: torch.Tensor,
                bundle: ConditionBundle) -> torch.Tensor:
        """Velocity prediction (B, L, d_color) at flow time t (B,)."""
        if not torch.isfinite(x_t).all():
            raise NumericError("non-finite noisy latents")
        self.eval_count += 1
        tokens, anchors = assemble_tokens(x_t, bundle)
        h = self.in_proj(tokens)
        t_vec = self.t_embed(t.to(h.dtype))
        ctx, ctx_mask = self._context(bundle, batch=x_t.shape[0], dtype=h.dtype)
        for blk in self.blocks:
            h = blk(h, t_vec, anchors.to(h.dtype), ctx, context_mask=ctx_mask)
        shift, scale = self.final_mod(t_vec)[:, None, :].chunk(2, dim=-1)
        return self.head(self.ln_final(h) * (1 + scale) + shift)
