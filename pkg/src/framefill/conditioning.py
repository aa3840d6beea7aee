"""Conditioning channels for the denoiser: temporally upsampled input video,
binary keyframe mask, mask latent encoding, and channel concatenation.

The low-frame-rate input is stretched to the target frame rate with
nearest-neighbor repetition (ties round toward the earlier keyframe), paired
with a per-pixel binary mask that marks true observed frames. The mask is
carried to latent resolution by nearest spatial downsampling plus a
time-to-channels rearrangement, so all conditioning shares the latent grid's
spatio-temporal dims and can be concatenated channel-wise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .video_io import FrameSequence


@dataclass(frozen=True)
class KeyframeMask:
    """Per-pixel binary mask, all-ones exactly at frames t = 0 (mod s)."""

    values: np.ndarray  # (T, H, W, 1) float32 in {0, 1}
    s: int

    def __post_init__(self):
        if self.values.ndim != 4 or self.values.shape[3] != 1:
            raise ValueError(f"mask must be (T, H, W, 1), got {self.values.shape}")


@dataclass(frozen=True)
class ConditionLatent:
    """Latent-resolution conditioning: encoded upsampled input + mask latent."""

    lq_latent: np.ndarray    # (T', H', W', C')
    mask_latent: np.ndarray  # (T', H', W', r_t)

    def __post_init__(self):
        if self.lq_latent.shape[:3] != self.mask_latent.shape[:3]:
            raise ValueError(
                f"lq latent {self.lq_latent.shape} and mask latent "
                f"{self.mask_latent.shape} disagree on T'xH'xW'"
            )


def upsampled_length(t_lq: int, s: int) -> int:
    return s * (t_lq - 1) + 1


def nearest_source_index(t: int, s: int) -> int:
    # round(t/s) with halves rounding down: ceil(t/s - 1/2)
    return (2 * t + s - 1) // (2 * s)


def nn_upsample(lq: FrameSequence, s: int) -> FrameSequence:
    """Nearest-neighbor temporal upsampling; keyframes are copied bit-exactly
    and runs between keyframes are constant."""
    if s < 1:
        raise ValueError(f"upsampling factor must be >= 1, got {s}")
    if s == 1:
        return FrameSequence(lq.frames.copy(), lq.frame_rate_hint)
    t_out = upsampled_length(lq.shape[0], s)
    idx = np.array([nearest_source_index(t, s) for t in range(t_out)])
    return FrameSequence(lq.frames[idx].copy(), lq.frame_rate_hint)


def zero_pad_upsample(lq: FrameSequence, s: int) -> FrameSequence:
    """Reference conditioner: keyframes in place, zeros elsewhere.

    Kept only as the comparison arm for conditioning ablations.
    """
    if s < 1:
        raise ValueError(f"upsampling factor must be >= 1, got {s}")
    t_out = upsampled_length(lq.shape[0], s)
    frames = np.zeros((t_out,) + lq.shape[1:], dtype=np.float32)
    frames[::s] = lq.frames
    return FrameSequence(frames, lq.frame_rate_hint)


def build_mask(t_hq: int, s: int, h: int, w: int) -> KeyframeMask:
    if s < 1:
        raise ValueError(f"upsampling factor must be >= 1, got {s}")
    if (t_hq - 1) % s != 0:
        raise ValueError(f"(T_hq-1)={t_hq - 1} not divisible by s={s}")
    values = np.zeros((t_hq, h, w, 1), dtype=np.float32)
    values[::s] = 1.0
    return KeyframeMask(values, s)


def encode_mask(mask: KeyframeMask, r_s: int, r_t: int) -> np.ndarray:
    """Nearest spatial downsample by r_s, then fold each run of r_t frames
    into channels: out[k, y, x, c] == mask[k*r_t + c, y*r_s, x*r_s]."""
    t, h, w, c = mask.values.shape
    if t % r_t != 0:
        raise ValueError(f"mask length {t} not divisible by temporal stride {r_t}")
    if h % r_s != 0 or w % r_s != 0:
        raise ValueError(f"mask dims {h}x{w} not divisible by spatial stride {r_s}")
    down = mask.values[:, ::r_s, ::r_s, :]
    folded = down.reshape(t // r_t, r_t, h // r_s, w // r_s, c)
    return np.ascontiguousarray(np.moveaxis(folded, 1, 3).reshape(
        t // r_t, h // r_s, w // r_s, r_t * c))


def decode_mask(latent: np.ndarray, r_s: int, r_t: int) -> np.ndarray:
    """Inverse of encode_mask for binary full-frame masks (exact)."""
    t_lat, h_lat, w_lat, c_lat = latent.shape
    if c_lat % r_t != 0:
        raise ValueError(f"latent channels {c_lat} not divisible by r_t={r_t}")
    c = c_lat // r_t
    unfolded = latent.reshape(t_lat, h_lat, w_lat, r_t, c)
    frames = np.moveaxis(unfolded, 3, 1).reshape(t_lat * r_t, h_lat, w_lat, c)
    return np.repeat(np.repeat(frames, r_s, axis=1), r_s, axis=2)


def concat_condition(noised_gt: np.ndarray, cond: ConditionLatent) -> np.ndarray:
    """Channel concatenation in pinned order: (noised target, input latent,
    mask latent)."""
    if noised_gt.shape[:3] != cond.lq_latent.shape[:3]:
        raise ValueError(
            f"noised latent {noised_gt.shape} and conditioning "
            f"{cond.lq_latent.shape} disagree on T'xH'xW'"
        )
    return np.concatenate([noised_gt, cond.lq_latent, cond.mask_latent], axis=-1)
