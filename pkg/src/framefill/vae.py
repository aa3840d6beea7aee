"""Small trainable frame codec with a KL-regularized latent and a conditional
decoder that injects multi-scale features from the low-frame-rate input.

The encoder/decoder are strided 3-D conv stacks (2-3 levels, widths <= 64).
The conditional path mirrors the decoder's level stack: the upsampled input
chunk is reduced to each level's resolution, passed through a small feature
extractor, and added to the decoder activations through zero-initialized
projections, so at initialization the conditional decode is bit-identical to
the unconditional one.

Array convention at the module boundary: pixel blocks are (F, H, W, C) and
latents (F', H', W', C') numpy float32; internally torch uses (B, C, F, H, W).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

L1_WEIGHT = 1.0
KL_WEIGHT = 1.0e-6


@dataclass(frozen=True)
class VaeConfig:
    spatial_stride: int = 4
    temporal_stride: int = 2
    latent_channels: int = 8
    base_width: int = 16
    level_count: int = 3
    in_channels: int = 3

    def __post_init__(self):
        if self.spatial_stride != 2 ** (self.level_count - 1):
            raise ValueError(
                f"spatial_stride {self.spatial_stride} must equal "
                f"2^(level_count-1) = {2 ** (self.level_count - 1)}"
            )
        if self.latent_channels < 1:
            raise ValueError("latent_channels must be >= 1")
        t = self.temporal_stride
        if t < 1 or (t & (t - 1)) != 0:
            raise ValueError(f"temporal_stride must be a power of two, got {t}")
        if t > self.spatial_stride:
            raise ValueError("temporal_stride cannot exceed spatial_stride")

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(min(self.base_width * 2 ** l, 64) for l in range(self.level_count))

    def temporal_factor(self, level: int) -> int:
        """Cumulative temporal downsampling at a given level."""
        return 2 ** min(level, int(math.log2(self.temporal_stride)))


@dataclass(frozen=True)
class LatentStats:
    """Diagonal-Gaussian posterior over the latent block."""

    mean: np.ndarray
    log_variance: np.ndarray

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        eps = rng.standard_normal(self.mean.shape).astype(self.mean.dtype)
        return self.mean + np.exp(0.5 * self.log_variance) * eps


def _groups(width: int) -> int:
    return math.gcd(8, width)


class ResBlock(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(width), width)
        self.conv1 = nn.Conv3d(width, width, (1, 3, 3), padding=(0, 1, 1))
        self.norm2 = nn.GroupNorm(_groups(width), width)
        self.conv2 = nn.Conv3d(width, width, (1, 3, 3), padding=(0, 1, 1))

    def forward(self, x):
        h = self.conv1(F.silu(self.norm1(x)))
        h = self.conv2(F.silu(self.norm2(h)))
        return x + h


class Encoder(nn.Module):
    """Strided conv stack: pixels -> (mean, logvar) at latent resolution."""

    def __init__(self, cfg: VaeConfig):
        super().__init__()
        w = cfg.widths
        self.stem = nn.Conv3d(cfg.in_channels, w[0], (1, 3, 3), padding=(0, 1, 1))
        downs, blocks = [], []
        for l in range(cfg.level_count - 1):
            t_stride = cfg.temporal_factor(l + 1) // cfg.temporal_factor(l)
            downs.append(nn.Conv3d(w[l], w[l + 1], 3, stride=(t_stride, 2, 2), padding=1))
            blocks.append(ResBlock(w[l + 1]))
        self.downs = nn.ModuleList(downs)
        self.blocks = nn.ModuleList(blocks)
        self.out_norm = nn.GroupNorm(_groups(w[-1]), w[-1])
        self.to_stats = nn.Conv3d(w[-1], 2 * cfg.latent_channels, (1, 3, 3), padding=(0, 1, 1))

    def forward(self, x):
        h = self.stem(x)
        for down, block in zip(self.downs, self.blocks):
            h = block(down(h))
        stats = self.to_stats(F.silu(self.out_norm(h)))
        mean, logvar = stats.chunk(2, dim=1)
        return mean, torch.clamp(logvar, -30.0, 20.0)


class CondLevel(nn.Module):
    """Feature extractor + zero-initialized projection for one decoder level."""

    def __init__(self, in_channels: int, width: int):
        super().__init__()
        self.extract = nn.Sequential(
            nn.Conv3d(in_channels, width, (1, 3, 3), padding=(0, 1, 1)),
            nn.SiLU(),
            nn.Conv3d(width, width, (1, 3, 3), padding=(0, 1, 1)),
        )
        self.project = nn.Conv3d(width, width, 1)
        nn.init.zeros_(self.project.weight)
        nn.init.zeros_(self.project.bias)

    def forward(self, lq_level):
        return self.project(self.extract(lq_level))


class Decoder(nn.Module):
    """Mirror of the encoder with optional per-level conditional injections."""

    def __init__(self, cfg: VaeConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.widths
        top = cfg.level_count - 1
        self.stem = nn.Conv3d(cfg.latent_channels, w[top], (1, 3, 3), padding=(0, 1, 1))
        self.block_top = ResBlock(w[top])
        ups, blocks = [], []
        for l in range(top - 1, -1, -1):
            t_up = cfg.temporal_factor(l + 1) // cfg.temporal_factor(l)
            ups.append(_Upsample(w[l + 1], w[l], t_up))
            blocks.append(ResBlock(w[l]))
        self.ups = nn.ModuleList(ups)
        self.blocks = nn.ModuleList(blocks)
        self.out_norm = nn.GroupNorm(_groups(w[0]), w[0])
        self.to_pixels = nn.Conv3d(w[0], cfg.in_channels, (1, 3, 3), padding=(0, 1, 1))
        # conditional branch, one injection per level (top first)
        self.cond_levels = nn.ModuleList(
            [CondLevel(cfg.in_channels, w[top])]
            + [CondLevel(cfg.in_channels, w[l]) for l in range(top - 1, -1, -1)]
        )

    def _lq_pyramid(self, lq):
        """Nearest-downsampled copies of the input chunk, one per level (top first)."""
        cfg = self.cfg
        levels = []
        for l in range(cfg.level_count - 1, -1, -1):
            sp = 2 ** l
            tf = cfg.temporal_factor(l)
            levels.append(lq[:, :, ::tf, ::sp, ::sp])
        return levels

    def forward(self, z, lq=None):
        inject = lq is not None
        if inject:
            pyramid = self._lq_pyramid(lq)
        h = self.block_top(self.stem(z))
        if inject:
            h = h + self.cond_levels[0](pyramid[0])
        for i, (up, block) in enumerate(zip(self.ups, self.blocks)):
            h = block(up(h))
            if inject:
                h = h + self.cond_levels[i + 1](pyramid[i + 1])
        return torch.sigmoid(self.to_pixels(F.silu(self.out_norm(h))))


class _Upsample(nn.Module):
    """Temporal nearest-repeat + conv, then 2x spatial sub-pixel shuffle."""

    def __init__(self, w_in: int, w_out: int, t_up: int):
        super().__init__()
        self.t_up = t_up
        self.w_out = w_out
        if t_up > 1:
            self.t_conv = nn.Conv3d(w_in, w_in, (3, 1, 1), padding=(1, 0, 0))
        self.conv = nn.Conv3d(w_in, 4 * w_out, (1, 3, 3), padding=(0, 1, 1))

    def forward(self, x):
        if self.t_up > 1:
            x = F.interpolate(x, scale_factor=(float(self.t_up), 1.0, 1.0),
                              mode="nearest")
            x = self.t_conv(x)
        x = self.conv(x)
        b, _, f, h, w = x.shape
        x = x.view(b, self.w_out, 2, 2, f, h, w)
        x = x.permute(0, 1, 4, 5, 2, 6, 3)
        return x.reshape(b, self.w_out, f, 2 * h, 2 * w)


class VaeModel(nn.Module):
    def __init__(self, cfg: VaeConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.decoder = Decoder(cfg)

    def encode_t(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self.encoder(x)

    def decode_t(self, z: torch.Tensor) -> torch.Tensor:
        return self.decoder(z)

    def cond_decode_t(self, z: torch.Tensor, lq: torch.Tensor) -> torch.Tensor:
        return self.decoder(z, lq)


def init_weights(model: nn.Module, seed: int) -> None:
    """Deterministic init from a dedicated generator; zero-projections stay zero."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    zero_params = {
        id(p) for m in model.modules() if isinstance(m, CondLevel)
        for p in m.project.parameters()
    }
    for name, p in sorted(model.named_parameters(), key=lambda kv: kv[0]):
        if id(p) in zero_params:
            continue
        with torch.no_grad():
            if p.ndim >= 2:
                fan_in = p[0].numel()
                std = math.sqrt(2.0 / fan_in)
                p.copy_(torch.from_numpy(
                    rng.normal(0.0, std, size=tuple(p.shape)).astype(np.float32)
                ).to(p.dtype))
            elif "norm" in name and name.endswith("weight"):
                p.fill_(1.0)
            else:
                p.zero_()


# ---------------------------------------------------------------------------
# Block-level numpy API
# ---------------------------------------------------------------------------

def _block_to_torch(block: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(np.moveaxis(block, 3, 0))).unsqueeze(0).to(dtype)


def _torch_to_block(x: torch.Tensor) -> np.ndarray:
    return np.ascontiguousarray(np.moveaxis(x.squeeze(0).numpy(), 0, 3))


def _check_block(block: np.ndarray, cfg: VaeConfig) -> None:
    f, h, w, c = block.shape
    if c != cfg.in_channels:
        raise ValueError(f"block has {c} channels, config expects {cfg.in_channels}")
    if f % cfg.temporal_stride != 0:
        raise ValueError(f"block length {f} not divisible by temporal stride "
                         f"{cfg.temporal_stride}")
    if h % cfg.spatial_stride != 0 or w % cfg.spatial_stride != 0:
        raise ValueError(f"block dims {h}x{w} not divisible by spatial stride "
                         f"{cfg.spatial_stride}")


def vae_encode(model: VaeModel, block: np.ndarray) -> LatentStats:
    _check_block(block, model.cfg)
    with torch.no_grad():
        mean, logvar = model.encode_t(_block_to_torch(block))
    return LatentStats(_torch_to_block(mean), _torch_to_block(logvar))


def vae_decode(model: VaeModel, z: np.ndarray) -> np.ndarray:
    if z.shape[3] != model.cfg.latent_channels:
        raise ValueError(f"latent has {z.shape[3]} channels, config expects "
                         f"{model.cfg.latent_channels}")
    with torch.no_grad():
        x = model.decode_t(_block_to_torch(z))
    return _torch_to_block(x)


def cond_decode(model: VaeModel, z: np.ndarray, lq_block: np.ndarray) -> np.ndarray:
    cfg = model.cfg
    if z.shape[3] != cfg.latent_channels:
        raise ValueError(f"latent has {z.shape[3]} channels, config expects "
                         f"{cfg.latent_channels}")
    expect = (z.shape[0] * cfg.temporal_stride, z.shape[1] * cfg.spatial_stride,
              z.shape[2] * cfg.spatial_stride, cfg.in_channels)
    if tuple(lq_block.shape) != expect:
        raise ValueError(f"conditioning block {lq_block.shape} misaligned with latent: "
                         f"expected {expect}")
    with torch.no_grad():
        x = model.cond_decode_t(_block_to_torch(z), _block_to_torch(lq_block))
    return _torch_to_block(x)


def vae_loss(x: torch.Tensor, x_hat: torch.Tensor, mean: torch.Tensor,
             logvar: torch.Tensor) -> dict[str, torch.Tensor]:
    """L1 reconstruction plus closed-form KL to the unit normal.

    total = l1 + 1e-6 * kl, with kl the per-element mean of
    0.5 * (mu^2 + sigma^2 - 1 - log sigma^2).
    """
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    l1 = (x - x_hat).abs().mean()
    kl = 0.5 * (mean ** 2 + torch.exp(logvar) - 1.0 - logvar).mean()
    return {"l1": l1, "kl": kl, "total": L1_WEIGHT * l1 + KL_WEIGHT * kl}


class ToyVaeCodec:
    """FrameCodec adapter: deterministic encode via the posterior mean."""

    def __init__(self, model: VaeModel):
        self.model = model
        cfg = model.cfg
        self.spatial_stride = cfg.spatial_stride
        self.temporal_stride = cfg.temporal_stride
        self.latent_channels = cfg.latent_channels

    def encode(self, block: np.ndarray) -> np.ndarray:
        return vae_encode(self.model, block).mean

    def decode(self, latent: np.ndarray) -> np.ndarray:
        return vae_decode(self.model, latent)

    def decode_cond(self, latent: np.ndarray, lq_block: np.ndarray) -> np.ndarray:
        return cond_decode(self.model, latent, lq_block)
