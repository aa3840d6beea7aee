"""Toy diffusion transformer predicting per-chunk velocity fields.

Latents are patchified into a chunk-major token sequence over a (temporal
chunk, spatial chunk) grid. Every transformer block is modulated per temporal
chunk: each chunk's noise level is embedded (sinusoidal features + MLP) and
drives zero-initialized scale/shift/gate parameters of the normalization, so
chunks at different noise levels are processed differently within one forward
pass. Attention is windowed over spatial chunks and dense over time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention import ChunkGrid, WindowSpec, sparse_attention


@dataclass(frozen=True)
class DenoiserConfig:
    model_dim: int = 64
    head_count: int = 4
    layer_count: int = 4
    token_patch: int = 2  # latent pixels per token, per spatial axis

    def __post_init__(self):
        if self.model_dim % self.head_count != 0:
            raise ValueError(f"model_dim {self.model_dim} not divisible by "
                             f"head_count {self.head_count}")
        if self.layer_count < 1:
            raise ValueError("layer_count must be >= 1")
        if self.token_patch < 1:
            raise ValueError("token_patch must be >= 1")


# ---------------------------------------------------------------------------
# Tokenization
# ---------------------------------------------------------------------------

def patchify(latent: torch.Tensor, patch: int, chunk_len_latent: int,
             spatial_chunk: Optional[tuple[int, int]] = None,
             ) -> tuple[torch.Tensor, ChunkGrid, torch.Tensor]:
    """Rearrange (B, T', H', W', C) into chunk-major tokens.

    Returns (tokens (B, N, C*patch^2), grid, positions (N, 3)) where positions
    hold each token's (latent frame, token row, token col) coordinates.
    Spatial chunk extents are given in latent pixels; None means one chunk
    covering the frame.
    """
    b, t_lat, h_lat, w_lat, c = latent.shape
    if h_lat % patch or w_lat % patch:
        raise ValueError(f"latent dims {h_lat}x{w_lat} not divisible by patch {patch}")
    if t_lat % chunk_len_latent:
        raise ValueError(f"T'={t_lat} not divisible by chunk_len_latent={chunk_len_latent}")
    hy, wx = h_lat // patch, w_lat // patch
    f = chunk_len_latent
    nt = t_lat // f
    sc_h, sc_w = spatial_chunk if spatial_chunk is not None else (h_lat, w_lat)
    if sc_h % patch or sc_w % patch:
        raise ValueError(f"spatial chunk {sc_h}x{sc_w} not divisible by patch {patch}")
    ch, cw = sc_h // patch, sc_w // patch
    if hy % ch or wx % cw:
        raise ValueError(f"token grid {hy}x{wx} not divisible by chunk tokens {ch}x{cw}")
    nh, nw = hy // ch, wx // cw

    x = latent.reshape(b, nt, f, nh, ch, patch, nw, cw, patch, c)
    x = x.permute(0, 1, 3, 6, 2, 4, 7, 5, 8, 9)  # B nT nH nW f ch cw p p C
    tokens = x.reshape(b, nt * nh * nw * f * ch * cw, patch * patch * c)

    grid = ChunkGrid(nT=nt, nH=nh, nW=nw, tokens_per_chunk=f * ch * cw)
    tt, ii, jj, ff, yy, xx = torch.meshgrid(
        torch.arange(nt), torch.arange(nh), torch.arange(nw),
        torch.arange(f), torch.arange(ch), torch.arange(cw), indexing="ij")
    pos = torch.stack([tt * f + ff, ii * ch + yy, jj * cw + xx], dim=-1).reshape(-1, 3)
    return tokens, grid, pos


def unpatchify(tokens: torch.Tensor, grid: ChunkGrid, patch: int,
               chunk_len_latent: int, chunk_tokens: tuple[int, int],
               channels: int) -> torch.Tensor:
    """Invert patchify back to (B, T', H', W', C); chunk_tokens is the
    spatial chunk extent in tokens per axis."""
    b = tokens.shape[0]
    f = chunk_len_latent
    ch, cw = chunk_tokens
    if f * ch * cw != grid.tokens_per_chunk:
        raise ValueError(f"chunk extents ({f}, {ch}, {cw}) inconsistent with "
                         f"tokens_per_chunk {grid.tokens_per_chunk}")
    x = tokens.reshape(b, grid.nT, grid.nH, grid.nW, f, ch, cw, patch, patch, channels)
    x = x.permute(0, 1, 4, 2, 5, 7, 3, 6, 8, 9)  # B nT f nH ch p nW cw p C
    return x.reshape(b, grid.nT * f, grid.nH * ch * patch, grid.nW * cw * patch, channels)


# ---------------------------------------------------------------------------
# Embeddings
# ---------------------------------------------------------------------------

def sinusoidal_features(pos: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Standard sin/cos features of scalar positions; dim must be even."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    angles = pos.to(torch.float64)[..., None] * freqs
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)


def positional_encoding(pos: torch.Tensor, dim: int, dtype=torch.float32) -> torch.Tensor:
    """Separable sinusoidal encoding of (frame, row, col) token coordinates."""
    d_t = (dim // 2) & ~1
    d_y = (dim // 4) & ~1
    d_x = dim - d_t - d_y
    parts = [
        sinusoidal_features(pos[:, 0], d_t),
        sinusoidal_features(pos[:, 1], d_y),
        sinusoidal_features(pos[:, 2], d_x),
    ]
    return torch.cat(parts, dim=-1).to(dtype)


class ChunkTimeEmbedding(nn.Module):
    """Noise level tau of one temporal chunk -> modulation vector."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.mlp = nn.Sequential(nn.Linear(dim, dim), nn.SiLU(), nn.Linear(dim, dim))

    def forward(self, taus: torch.Tensor) -> torch.Tensor:
        feats = sinusoidal_features(taus * 1000.0, self.dim).to(taus.dtype)
        return self.mlp(feats)


# ---------------------------------------------------------------------------
# Transformer
# ---------------------------------------------------------------------------

def modulate(x: torch.Tensor, shift: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    return x * (1.0 + scale) + shift


class DenoiserBlock(nn.Module):
    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        d = cfg.model_dim
        self.heads = cfg.head_count
        self.qkv = nn.Linear(d, 3 * d)
        self.proj = nn.Linear(d, d)
        self.mlp = nn.Sequential(nn.Linear(d, 4 * d), nn.GELU(), nn.Linear(4 * d, d))
        self.ada = nn.Sequential(nn.SiLU(), nn.Linear(d, 6 * d))
        nn.init.zeros_(self.ada[-1].weight)
        nn.init.zeros_(self.ada[-1].bias)

    def forward(self, x, mod, grid: ChunkGrid, window: WindowSpec, temporal_dense: bool):
        d = x.shape[-1]
        shift1, scale1, gate1, shift2, scale2, gate2 = self.ada(mod).chunk(6, dim=-1)
        h = modulate(F.layer_norm(x, (d,)), shift1, scale1)
        b, n, _ = h.shape
        qkv = self.qkv(h).reshape(b, n, 3, self.heads, d // self.heads)
        q, k, v = (qkv[:, :, i].transpose(1, 2) for i in range(3))  # B H N dh
        attn = sparse_attention(q, k, v, grid, window, temporal_dense=temporal_dense)
        attn = attn.transpose(1, 2).reshape(b, n, d)
        x = x + gate1 * self.proj(attn)
        h = modulate(F.layer_norm(x, (d,)), shift2, scale2)
        return x + gate2 * self.mlp(h)


class Denoiser(nn.Module):
    """Velocity predictor over chunk-major latent tokens.

    forward(latent, taus): latent is (B, T', H', W', C_in) holding the noised
    target channels concatenated with the conditioning channels; taus is
    (B, nT) with one noise level per temporal chunk. Output has out_channels.
    """

    def __init__(self, cfg: DenoiserConfig, in_channels: int, out_channels: int,
                 chunk_len_latent: int, spatial_chunk: Optional[tuple[int, int]],
                 window: WindowSpec):
        super().__init__()
        self.cfg = cfg
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.chunk_len_latent = chunk_len_latent
        self.spatial_chunk = spatial_chunk
        self.window = window
        d, p = cfg.model_dim, cfg.token_patch
        self.token_in = nn.Linear(in_channels * p * p, d)
        self.time_embed = ChunkTimeEmbedding(d)
        self.blocks = nn.ModuleList(DenoiserBlock(cfg) for _ in range(cfg.layer_count))
        self.final_ada = nn.Sequential(nn.SiLU(), nn.Linear(d, 2 * d))
        self.head = nn.Linear(d, out_channels * p * p)
        nn.init.zeros_(self.final_ada[-1].weight)
        nn.init.zeros_(self.final_ada[-1].bias)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, latent: torch.Tensor, taus: torch.Tensor,
                temporal_dense: bool = True) -> torch.Tensor:
        if latent.ndim != 5 or latent.shape[-1] != self.in_channels:
            raise ValueError(f"expected (B, T', H', W', {self.in_channels}), "
                             f"got {tuple(latent.shape)}")
        p = self.cfg.token_patch
        tokens, grid, pos = patchify(latent, p, self.chunk_len_latent, self.spatial_chunk)
        if taus.ndim != 2 or taus.shape != (latent.shape[0], grid.nT):
            raise ValueError(f"taus must be (B, {grid.nT}), got {tuple(taus.shape)}")

        x = self.token_in(tokens)
        x = x + positional_encoding(pos, self.cfg.model_dim, x.dtype).to(x.device)

        emb = self.time_embed(taus)  # (B, nT, D)
        spatial_chunks = grid.nH * grid.nW
        token_tau = (torch.arange(grid.token_count, device=x.device)
                     // grid.tokens_per_chunk) // spatial_chunks
        mod = emb[:, token_tau, :]  # (B, N, D)

        for block in self.blocks:
            x = block(x, mod, grid, self.window, temporal_dense)

        shift, scale = self.final_ada(mod).chunk(2, dim=-1)
        x = modulate(F.layer_norm(x, (self.cfg.model_dim,)), shift, scale)
        out = self.head(x)
        spatial_tokens = grid.tokens_per_chunk // self.chunk_len_latent
        ch = (self.spatial_chunk[0] // p if self.spatial_chunk is not None
              else latent.shape[2] // p)
        chunk_tokens = (ch, spatial_tokens // ch)
        return unpatchify(out, grid, p, self.chunk_len_latent, chunk_tokens,
                          self.out_channels)


def init_denoiser_weights(model: Denoiser, seed: int) -> None:
    """Deterministic init; adaptive-modulation and output heads stay zero."""
    zero_params = set()
    for m in model.modules():
        if isinstance(m, (DenoiserBlock,)):
            zero_params.update(id(p) for p in m.ada[-1].parameters())
    zero_params.update(id(p) for p in model.final_ada[-1].parameters())
    zero_params.update(id(p) for p in model.head.parameters())

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD17]))
    for name, p in sorted(model.named_parameters(), key=lambda kv: kv[0]):
        if id(p) in zero_params:
            continue
        with torch.no_grad():
            if p.ndim >= 2:
                std = math.sqrt(1.0 / p.shape[-1])
                p.copy_(torch.from_numpy(
                    rng.normal(0.0, std, size=tuple(p.shape)).astype(np.float32)
                ).to(p.dtype))
            else:
                p.zero_()
