"""Geometry-aware color point cloud VAE.

Dual branch: a deterministic geometry branch turns sampled point queries
into an ordered latent set (token i belongs to query point i); the color
branch encodes the full cloud guided by those geometry latents into a
variational color latent set sharing the same anchors. The decoder maps
arbitrary 3D queries to RGB + truncated-UDF occupancy.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn as nn

from ..errors import ContractViolationError, ParameterError
from ..nn.blocks import (AttentionBlockConfig, CrossAttentionBlock, FrequencyEmbed,
                         SelfAttentionBlock)

LOGVAR_MIN = -30.0
LOGVAR_MAX = 20.0


@dataclass(frozen=True)
class VAEConfig:
    width: int = 256
    heads: int = 4
    geo_blocks: int = 2
    color_blocks: int = 4
    decoder_blocks: int = 4
    d_geo: int = 8
    d_color: int = 8
    freq_octaves: int = 8

    def block_config(self) -> AttentionBlockConfig:
        return AttentionBlockConfig(width=self.width, heads=self.heads)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("width", "heads", "geo_blocks", "color_blocks", "decoder_blocks",
                 "d_geo", "d_color", "freq_octaves")}


@dataclass
class GeoLatentSet:
    """Ordered geometry latents; token i is produced by anchor point i."""

    tokens: torch.Tensor            # (B, L, d_geo)
    anchor_positions: torch.Tensor  # (B, L, 3)
    anchor_normals: torch.Tensor    # (B, L, 3)


@dataclass
class ColorPosterior:
    mean: torch.Tensor              # (B, L, d_color)
    logvar: torch.Tensor            # (B, L, d_color), clamped
    anchor_positions: torch.Tensor  # (B, L, 3)


@dataclass
class ColorLatentSet:
    tokens: torch.Tensor            # (B, L, d_color)
    anchor_positions: torch.Tensor  # (B, L, 3)


@dataclass
class FieldSample:
    rgb: torch.Tensor        # (B, M, 3) in [0,1]
    occupancy: torch.Tensor  # (B, M) in [0,1]


def select_queries(positions: np.ndarray, normals: np.ndarray, count: int,
                   seed: int):
    """Uniform subset without replacement; order fixed by the draw.

    Returns (query positions, query normals, chosen indices).
    """
    n = len(positions)
    if count > n:
        raise ParameterError(f"cannot select {count} queries from {n} points")
    idx = np.random.default_rng(seed).permutation(n)[:count]
    return positions[idx], normals[idx], idx


def reparameterize(posterior: ColorPosterior,
                   generator: Optional[torch.Generator] = None,
                   deterministic: bool = False) -> ColorLatentSet:
    """Sample tokens = mean + exp(logvar/2) * eps; deterministic returns the mean."""
    if deterministic:
        return ColorLatentSet(posterior.mean.clone(), posterior.anchor_positions)
    eps = torch.randn(posterior.mean.shape, generator=generator,
                      dtype=posterior.mean.dtype, device=posterior.mean.device)
    tokens = posterior.mean + torch.exp(0.5 * posterior.logvar) * eps
    return ColorLatentSet(tokens, posterior.anchor_positions)


def kl_divergence(posterior: ColorPosterior) -> torch.Tensor:
    """Mean KL(q || N(0, I)) per latent scalar (always >= 0)."""
    lv = posterior.logvar
    return 0.5 * (posterior.mean.square() + lv.exp() - 1.0 - lv).mean()


class ColorVAE(nn.Module):
    def __init__(self, cfg: VAEConfig):
        super().__init__()
        self.cfg = cfg
        block_cfg = cfg.block_config()
        w = cfg.width
        self.freq = FrequencyEmbed(cfg.freq_octaves)
        fd = self.freq.out_dim

        # geometry branch (deterministic, reusable at inference without colors)
        self.geo_pos = nn.Linear(fd, w)
        self.geo_nrm = nn.Linear(3, w)
        self.geo_cross = CrossAttentionBlock(block_cfg)
        self.geo_self = nn.ModuleList(SelfAttentionBlock(block_cfg)
                                      for _ in range(cfg.geo_blocks))
        self.geo_norm = nn.LayerNorm(w)
        self.geo_head = nn.Linear(w, cfg.d_geo)

        # color branch (variational), queried by the geometry latents
        self.col_pos = nn.Linear(fd, w)
        self.col_nrm = nn.Linear(3, w)
        self.col_rgb = nn.Linear(3, w)
        self.col_query = nn.Linear(cfg.d_geo, w)
        self.col_cross = CrossAttentionBlock(block_cfg)
        self.col_self = nn.ModuleList(SelfAttentionBlock(block_cfg)
                                      for _ in range(cfg.color_blocks))
        self.col_norm = nn.LayerNorm(w)
        self.mean_head = nn.Linear(w, cfg.d_color)
        self.logvar_head = nn.Linear(w, cfg.d_color)

        # decoder: latents are processed once, then queries cross-attend
        self.dec_in = nn.Linear(cfg.d_color, w)
        self.dec_self = nn.ModuleList(SelfAttentionBlock(block_cfg)
                                      for _ in range(cfg.decoder_blocks))
        self.dec_query = nn.Linear(fd, w)
        self.dec_cross = CrossAttentionBlock(block_cfg)
        self.dec_norm = nn.LayerNorm(w)
        self.rgb_head = nn.Linear(w, 3)
        self.occ_head = nn.Linear(w, 1)

    def _geo_embed(self, positions, normals):
        return self.geo_pos(self.freq(positions)) + self.geo_nrm(normals)

    def encode_geometry(self, positions: torch.Tensor, normals: torch.Tensor,
                        query_positions: torch.Tensor,
                        query_normals: torch.Tensor) -> GeoLatentSet:
        """Cloud positions+normals -> ordered latent set at the query points."""
        if positions.shape[1] == 0:
            raise ContractViolationError("empty cloud")
        ctx = self._geo_embed(positions, normals)
        x = self._geo_embed(query_positions, query_normals)
        x = self.geo_cross(x, ctx)
        for blk in self.geo_self:
            x = blk(x)
        tokens = self.geo_head(self.geo_norm(x))
        return GeoLatentSet(tokens=tokens, anchor_positions=query_positions,
                            anchor_normals=query_normals)

    def encode_color(self, positions: torch.Tensor, normals: torch.Tensor,
                     colors: torch.Tensor, geo: GeoLatentSet,
                     check_anchors: bool = True) -> ColorPosterior:
        """Full cloud (positions+normals+colors) queried by the geometry latents."""
        if geo.tokens.shape[0] != positions.shape[0]:
            raise ContractViolationError("batch mismatch between cloud and geometry latents")
        if check_anchors:
            self._check_anchor_subset(geo.anchor_positions, positions)
        ctx = (self.col_pos(self.freq(positions)) + self.col_nrm(normals)
               + self.col_rgb(colors))
        x = self.col_query(geo.tokens)
        x = self.col_cross(x, ctx)
        for blk in self.col_self:
            x = blk(x)
        h = self.col_norm(x)
        mean = self.mean_head(h)
        logvar = self.logvar_head(h).clamp(LOGVAR_MIN, LOGVAR_MAX)
        return ColorPosterior(mean=mean, logvar=logvar,
                              anchor_positions=geo.anchor_positions)

    @staticmethod
    def _check_anchor_subset(anchors: torch.Tensor, positions: torch.Tensor,
                             probes: int = 4):
        """Cheap spot check that anchors are actual cloud points."""
        l = anchors.shape[1]
        step = max(1, l // probes)
        for j in range(0, l, step):
            a = anchors[:, j:j + 1, :]
            hit = (positions - a).abs().sum(dim=2).min(dim=1).values
            if torch.any(hit > 1e-5):
                raise ContractViolationError(
                    "geometry latent anchors are not points of the encoded cloud")

    def process_latents(self, latents: ColorLatentSet) -> torch.Tensor:
        """Run decoder self-attention once; reusable across many decode calls."""
        x = self.dec_in(latents.tokens)
        for blk in self.dec_self:
            x = blk(x)
        return x

    def decode_processed(self, processed: torch.Tensor,
                         queries: torch.Tensor) -> FieldSample:
        q = self.dec_query(self.freq(queries))
        h = self.dec_norm(self.dec_cross(q, processed))
        rgb = torch.sigmoid(self.rgb_head(h))
        occ = torch.sigmoid(self.occ_head(h)).squeeze(-1)
        return FieldSample(rgb=rgb, occupancy=occ)

    def decode(self, latents: ColorLatentSet, queries: torch.Tensor,
               chunk: int = 8192) -> FieldSample:
        """Evaluate the color field at arbitrary query positions (B, M, 3).

        Queries never attend to each other, so the result is independent of
        batching; memory stays linear in M via chunked evaluation.
        """
        processed = self.process_latents(latents)
        outs_rgb, outs_occ = [], []
        for lo in range(0, queries.shape[1], chunk):
            part = self.decode_processed(processed, queries[:, lo:lo + chunk])
            outs_rgb.append(part.rgb)
            outs_occ.append(part.occupancy)
        return FieldSample(rgb=torch.cat(outs_rgb, dim=1),
                           occupancy=torch.cat(outs_occ, dim=1))

    def encode_decode(self, positions, normals, colors, query_positions,
                      query_normals, decode_queries, deterministic=True,
                      generator=None):
        """Full reconstruction path used by training and evaluation."""
        geo = self.encode_geometry(positions, normals, query_positions, query_normals)
        posterior = self.encode_color(positions, normals, colors, geo)
        latents = reparameterize(posterior, generator=generator,
                                 deterministic=deterministic)
        field = self.decode(latents, decode_queries)
        return geo, posterior, latents, field
