"""Deterministic training loops for the frame codec and the denoiser.

All stochastic draws come from numpy generators keyed by (seed, step), so a
run resumed from a checkpoint replays the exact trajectory of the unbroken
run. Checkpoints store parameters and Adam state in the flat-f32 payload
format and are therefore bit-exact across save/load.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .conditioning import KeyframeMask, build_mask, encode_mask, nn_upsample
from .denoiser import Denoiser, DenoiserConfig, init_denoiser_weights
from .flow import draw_chunk_taus
from .runtime import configure_torch
from .serialization import read_payload, write_payload
from .tiling import plan_chunks, plan_tiles, tiled_encode
from .vae import ToyVaeCodec, VaeConfig, VaeModel, init_weights, vae_loss
from .video_io import FrameSequence, downsample_temporal, load_video


class TrainingDiverged(RuntimeError):
    pass


def cosine_lr(base_lr: float, step: int, total_steps: int, floor_ratio: float = 0.1) -> float:
    """Cosine decay from base_lr to floor_ratio*base_lr; pure function of step."""
    if total_steps <= 1:
        return base_lr
    floor = floor_ratio * base_lr
    t = min(step, total_steps - 1) / (total_steps - 1)
    return floor + 0.5 * (base_lr - floor) * (1.0 + math.cos(math.pi * t))


def step_rng(seed: int, step: int, salt: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, step, salt]))


def collect_grads(loss: torch.Tensor, model: torch.nn.Module) -> dict[str, torch.Tensor]:
    """Reverse-mode gradients for every parameter; aborts on non-finite values."""
    model.zero_grad(set_to_none=True)
    loss.backward()
    grads = {}
    for name, p in model.named_parameters():
        g = p.grad if p.grad is not None else torch.zeros_like(p)
        if not torch.isfinite(g).all():
            raise TrainingDiverged(f"non-finite gradient in parameter {name!r}")
        grads[name] = g.detach().clone()
    return grads


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(base: str | Path, model: torch.nn.Module,
                    optimizer: Optional[torch.optim.Adam], step: int, kind: str,
                    config: dict, seed: int,
                    extra_arrays: Optional[dict[str, np.ndarray]] = None,
                    extra_meta: Optional[dict] = None) -> None:
    arrays: dict[str, np.ndarray] = {}
    for name, p in model.named_parameters():
        arrays[f"param.{name}"] = p.detach().cpu().numpy()
    if optimizer is not None:
        for name, p in model.named_parameters():
            state = optimizer.state.get(p)
            if state:
                arrays[f"adam.m.{name}"] = state["exp_avg"].cpu().numpy()
                arrays[f"adam.v.{name}"] = state["exp_avg_sq"].cpu().numpy()
                arrays[f"adam.step.{name}"] = np.asarray(
                    float(state["step"]), dtype=np.float32)
    for k, v in (extra_arrays or {}).items():
        arrays[k] = v
    meta = {"kind": kind, "config": config, "step": step, "seed": seed}
    meta.update(extra_meta or {})
    write_payload(base, arrays, meta)


def load_checkpoint(base: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    return read_payload(base)


def restore_model(model: torch.nn.Module, arrays: dict[str, np.ndarray]) -> None:
    for name, p in model.named_parameters():
        key = f"param.{name}"
        if key not in arrays:
            raise KeyError(f"checkpoint missing parameter {name!r}")
        with torch.no_grad():
            p.copy_(torch.from_numpy(arrays[key]).to(p.dtype))


def restore_optimizer(optimizer: torch.optim.Adam, model: torch.nn.Module,
                      arrays: dict[str, np.ndarray]) -> None:
    for name, p in model.named_parameters():
        m_key = f"adam.m.{name}"
        if m_key not in arrays:
            continue
        optimizer.state[p] = {
            "step": torch.tensor(float(arrays[f"adam.step.{name}"])),
            "exp_avg": torch.from_numpy(arrays[m_key]).clone(),
            "exp_avg_sq": torch.from_numpy(arrays[f"adam.v.{name}"]).clone(),
        }


def make_optimizer(model: torch.nn.Module, lr: float) -> torch.optim.Adam:
    # foreach=False pins the single-tensor kernel so resumed runs are bit-exact
    return torch.optim.Adam(model.parameters(), lr=lr, foreach=False)


def write_trace(path: str | Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# Corpus
# ---------------------------------------------------------------------------

def load_corpus(corpus_dir: str | Path) -> list[FrameSequence]:
    root = Path(corpus_dir)
    manifests = sorted(root.glob("*/manifest.json"))
    if not manifests:
        raise FileNotFoundError(f"no clip manifests under {root}")
    return [load_video(m) for m in manifests]


def pad_frames(frames: np.ndarray, multiple: int) -> tuple[np.ndarray, int]:
    """Pad to a multiple of ``multiple`` frames by repeating the last frame."""
    t = frames.shape[0]
    pad = (-t) % multiple
    if pad == 0:
        return frames, 0
    tail = np.repeat(frames[-1:], pad, axis=0)
    return np.concatenate([frames, tail], axis=0), pad


# ---------------------------------------------------------------------------
# Frame codec training
# ---------------------------------------------------------------------------

@dataclass
class VaeTrainSettings:
    steps: int = 1200
    batch_size: int = 2
    lr: float = 1.0e-3
    chunk_len: int = 8
    s_choices: tuple[int, ...] = (2, 4)
    checkpoint_every: int = 0
    trace_path: Optional[Path] = None
    checkpoint_path: Optional[Path] = None
    # cosine-decay horizon; defaults to `steps` (set when running a prefix of
    # a longer schedule, e.g. to reproduce an interrupted run)
    lr_schedule_steps: Optional[int] = None


def _vae_sample(corpus: list[FrameSequence], lq_cache: dict, chunk_len: int,
                s_choices: tuple[int, ...], rng: np.random.Generator,
                ) -> tuple[np.ndarray, np.ndarray]:
    clip_idx = int(rng.integers(len(corpus)))
    s = int(s_choices[rng.integers(len(s_choices))])
    clip = corpus[clip_idx].frames
    key = (clip_idx, s)
    if key not in lq_cache:
        lq = downsample_temporal(corpus[clip_idx], s)
        lq_cache[key] = nn_upsample(lq, s).frames
    up = lq_cache[key]
    max_start = clip.shape[0] - chunk_len
    # offsets stay keyframe-aligned so the conditioning phase matches inference
    start = int(rng.integers(max_start // s + 1)) * s
    x_blk = clip[start : start + chunk_len]
    lq_blk = up[start : start + chunk_len]
    # spatial flips (applied to both views) stretch the tiny corpus
    flips = tuple(ax for ax, on in ((1, rng.integers(2)), (2, rng.integers(2))) if on)
    if flips:
        x_blk = np.flip(x_blk, axis=flips)
        lq_blk = np.flip(lq_blk, axis=flips)
    return np.ascontiguousarray(x_blk), np.ascontiguousarray(lq_blk)


def train_vae(corpus: list[FrameSequence], cfg: VaeConfig, seed: int,
              settings: VaeTrainSettings,
              resume_from: Optional[str | Path] = None,
              ) -> tuple[VaeModel, list[tuple]]:
    """Joint training of encoder, decoder, and conditional injections.

    Per step: sample keyframe-aligned chunks, reconstruct through both the
    plain and the conditioned decoder, optimize mean branch L1 plus the KL
    penalty. Returns the model and the (step, l1, kl, total) trace rows.
    """
    if not corpus:
        raise ValueError("corpus is empty")
    configure_torch()
    model = VaeModel(cfg)
    init_weights(model, seed)
    optimizer = make_optimizer(model, settings.lr)
    start_step = 0
    if resume_from is not None:
        arrays, meta = load_checkpoint(resume_from)
        restore_model(model, arrays)
        restore_optimizer(optimizer, model, arrays)
        start_step = int(meta["step"])

    lq_cache: dict = {}
    rows: list[tuple] = []
    config_dict = {"spatial_stride": cfg.spatial_stride, "temporal_stride": cfg.temporal_stride,
                   "latent_channels": cfg.latent_channels, "base_width": cfg.base_width,
                   "level_count": cfg.level_count, "in_channels": cfg.in_channels}

    for step in range(start_step, settings.steps):
        rng = step_rng(seed, step, salt=1)
        lr_now = cosine_lr(settings.lr, step, settings.lr_schedule_steps or settings.steps)
        for group in optimizer.param_groups:
            group["lr"] = lr_now
        xs, lqs = [], []
        for _ in range(settings.batch_size):
            x_blk, lq_blk = _vae_sample(corpus, lq_cache, settings.chunk_len,
                                        settings.s_choices, rng)
            xs.append(np.moveaxis(x_blk, 3, 0))
            lqs.append(np.moveaxis(lq_blk, 3, 0))
        x = torch.from_numpy(np.stack(xs))
        lq = torch.from_numpy(np.stack(lqs))

        mean, logvar = model.encode_t(x)
        eps = torch.from_numpy(rng.standard_normal(tuple(mean.shape)).astype(np.float32))
        z = mean + torch.exp(0.5 * logvar) * eps
        recon_u = model.decode_t(z)
        recon_c = model.cond_decode_t(z, lq)

        loss_u = vae_loss(x, recon_u, mean, logvar)
        l1_c = (x - recon_c).abs().mean()
        l1 = 0.5 * (loss_u["l1"] + l1_c)
        total = l1 + 1.0e-6 * loss_u["kl"]
        if not torch.isfinite(total):
            raise TrainingDiverged(f"non-finite loss at step {step}")

        optimizer.zero_grad(set_to_none=True)
        total.backward()
        optimizer.step()
        rows.append((step, l1.item(), loss_u["kl"].item(), total.item()))

        if (settings.checkpoint_every and settings.checkpoint_path is not None
                and (step + 1) % settings.checkpoint_every == 0):
            save_checkpoint(settings.checkpoint_path, model, optimizer, step + 1,
                            "vae", config_dict, seed)

    if settings.checkpoint_path is not None:
        save_checkpoint(settings.checkpoint_path, model, optimizer, settings.steps,
                        "vae", config_dict, seed)
    if settings.trace_path is not None:
        write_trace(settings.trace_path, ("step", "l1", "kl", "total"), rows)
    return model, rows


def build_vae(config: dict) -> VaeModel:
    return VaeModel(VaeConfig(**config))


def load_vae(base: str | Path) -> VaeModel:
    arrays, meta = load_checkpoint(base)
    if meta.get("kind") != "vae":
        raise ValueError(f"checkpoint {base} is not a frame-codec checkpoint")
    model = build_vae(meta["config"])
    restore_model(model, arrays)
    model.eval()
    return model


# ---------------------------------------------------------------------------
# Denoiser training
# ---------------------------------------------------------------------------

@dataclass
class DenoiserTrainSettings:
    steps: int = 2500
    batch_size: int = 2
    lr: float = 2.0e-3
    chunk_len: int = 8
    s_choices: tuple[int, ...] = (2, 4)
    window_choices: tuple[int, ...] = (1, 2, 3)
    shift_train: float = 4.0
    tile: int = 64
    stride: int = 64
    window_radius: int = 1
    checkpoint_every: int = 0
    trace_path: Optional[Path] = None
    checkpoint_path: Optional[Path] = None
    lr_schedule_steps: Optional[int] = None


@dataclass
class LatentSample:
    gt: torch.Tensor    # (T', H', W', C'), normalized
    lq: torch.Tensor    # (T', H', W', C'), normalized
    mask: torch.Tensor  # (T', H', W', r_t)
    n_chunks: int


def precompute_latents(corpus: list[FrameSequence], vae: VaeModel,
                       settings: DenoiserTrainSettings,
                       ) -> tuple[list[LatentSample], np.ndarray, np.ndarray]:
    """Encode every (clip, s) pair once with the frozen codec.

    Returns the samples plus the per-channel latent mean/std used to
    normalize both targets and conditioning for the denoiser.
    """
    codec = ToyVaeCodec(vae)
    cfg = vae.cfg
    raw: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
    for clip in corpus:
        t, h, w, _ = clip.shape
        tiles = plan_tiles(h, w, settings.tile, settings.stride)
        for s in settings.s_choices:
            lq = downsample_temporal(clip, s)
            up = nn_upsample(lq, s).frames
            mask = build_mask(t, s, h, w).values
            gt_pad, _ = pad_frames(clip.frames, settings.chunk_len)
            up_pad, _ = pad_frames(up, settings.chunk_len)
            mask_pad, _ = pad_frames(mask, settings.chunk_len)
            chunks = plan_chunks(gt_pad.shape[0], settings.chunk_len)
            gt_lat = tiled_encode(gt_pad, codec, tiles, chunks).values
            lq_lat = tiled_encode(up_pad, codec, tiles, chunks).values
            mask_lat = encode_mask(KeyframeMask(mask_pad, s), cfg.spatial_stride,
                                   cfg.temporal_stride)
            raw.append((gt_lat, lq_lat, mask_lat))

    stacked = np.concatenate([g.reshape(-1, g.shape[-1]) for g, _, _ in raw], axis=0)
    mean = stacked.mean(axis=0).astype(np.float32)
    std = np.maximum(stacked.std(axis=0), 1.0e-4).astype(np.float32)

    f_lat = settings.chunk_len // cfg.temporal_stride
    samples = []
    for gt_lat, lq_lat, mask_lat in raw:
        samples.append(LatentSample(
            gt=torch.from_numpy((gt_lat - mean) / std),
            lq=torch.from_numpy((lq_lat - mean) / std),
            mask=torch.from_numpy(mask_lat),
            n_chunks=gt_lat.shape[0] // f_lat,
        ))
    return samples, mean, std


def build_denoiser(config: dict) -> Denoiser:
    from .attention import WindowSpec
    cfg = DenoiserConfig(model_dim=config["model_dim"], head_count=config["head_count"],
                         layer_count=config["layer_count"], token_patch=config["token_patch"])
    return Denoiser(cfg, in_channels=config["in_channels"],
                    out_channels=config["out_channels"],
                    chunk_len_latent=config["chunk_len_latent"],
                    spatial_chunk=tuple(config["spatial_chunk"]) if config.get("spatial_chunk") else None,
                    window=WindowSpec(config["window_radius"]))


def train_denoiser(corpus: list[FrameSequence], vae: VaeModel, dn_cfg: DenoiserConfig,
                   seed: int, settings: DenoiserTrainSettings,
                   resume_from: Optional[str | Path] = None,
                   ) -> tuple[Denoiser, np.ndarray, np.ndarray, list[tuple]]:
    """Velocity regression with an independent noise level per chunk.

    Windows of consecutive chunks are sliced from precomputed latents; every
    chunk is noised at its own shifted-uniform tau and the model regresses
    (noise - data) under MSE.
    """
    if not corpus:
        raise ValueError("corpus is empty")
    configure_torch()
    vae_cfg = vae.cfg
    f_lat = settings.chunk_len // vae_cfg.temporal_stride
    spatial_chunk = (settings.stride // vae_cfg.spatial_stride,
                     settings.stride // vae_cfg.spatial_stride)
    config_dict = {
        "model_dim": dn_cfg.model_dim, "head_count": dn_cfg.head_count,
        "layer_count": dn_cfg.layer_count, "token_patch": dn_cfg.token_patch,
        "in_channels": 2 * vae_cfg.latent_channels + vae_cfg.temporal_stride,
        "out_channels": vae_cfg.latent_channels,
        "chunk_len_latent": f_lat,
        "spatial_chunk": list(spatial_chunk),
        "window_radius": settings.window_radius,
    }
    model = build_denoiser(config_dict)
    init_denoiser_weights(model, seed)
    optimizer = make_optimizer(model, settings.lr)
    start_step = 0
    if resume_from is not None:
        arrays, meta = load_checkpoint(resume_from)
        restore_model(model, arrays)
        restore_optimizer(optimizer, model, arrays)
        start_step = int(meta["step"])

    vae.eval()
    samples, lat_mean, lat_std = precompute_latents(corpus, vae, settings)
    norm_arrays = {"latent_norm.mean": lat_mean, "latent_norm.std": lat_std}

    rows: list[tuple] = []
    for step in range(start_step, settings.steps):
        rng = step_rng(seed, step, salt=2)
        lr_now = cosine_lr(settings.lr, step, settings.lr_schedule_steps or settings.steps)
        for group in optimizer.param_groups:
            group["lr"] = lr_now
        w_len = int(settings.window_choices[rng.integers(len(settings.window_choices))])
        xs, targets, taus_all = [], [], []
        for _ in range(settings.batch_size):
            sample = samples[int(rng.integers(len(samples)))]
            w = min(w_len, sample.n_chunks)
            c0 = int(rng.integers(sample.n_chunks - w + 1))
            sl = slice(c0 * f_lat, (c0 + w) * f_lat)
            gt, lq, mask = sample.gt[sl], sample.lq[sl], sample.mask[sl]
            taus = draw_chunk_taus(rng, w, settings.shift_train)
            noise = torch.from_numpy(
                rng.standard_normal(tuple(gt.shape)).astype(np.float32))
            tau_t = torch.from_numpy(taus.astype(np.float32))
            per_frame = tau_t.repeat_interleave(f_lat).view(-1, 1, 1, 1)
            noised = (1.0 - per_frame) * gt + per_frame * noise
            xs.append(torch.cat([noised, lq, mask], dim=-1))
            targets.append(noise - gt)
            taus_all.append(tau_t)
        x = torch.stack(xs)
        target = torch.stack(targets)
        taus_b = torch.stack(taus_all)

        pred = model(x, taus_b)
        loss = ((pred - target) ** 2).mean()
        if not torch.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss at step {step}")
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        rows.append((step, loss.item()))

        if (settings.checkpoint_every and settings.checkpoint_path is not None
                and (step + 1) % settings.checkpoint_every == 0):
            save_checkpoint(settings.checkpoint_path, model, optimizer, step + 1,
                            "denoiser", config_dict, seed, extra_arrays=norm_arrays)

    if settings.checkpoint_path is not None:
        save_checkpoint(settings.checkpoint_path, model, optimizer, settings.steps,
                        "denoiser", config_dict, seed, extra_arrays=norm_arrays)
    if settings.trace_path is not None:
        write_trace(settings.trace_path, ("step", "loss"), rows)
    return model, lat_mean, lat_std, rows


def load_denoiser(base: str | Path) -> tuple[Denoiser, np.ndarray, np.ndarray]:
    arrays, meta = load_checkpoint(base)
    if meta.get("kind") != "denoiser":
        raise ValueError(f"checkpoint {base} is not a denoiser checkpoint")
    model = build_denoiser(meta["config"])
    restore_model(model, arrays)
    model.eval()
    return model, arrays["latent_norm.mean"], arrays["latent_norm.std"]
