"""Flow matching with per-chunk noise levels and Euler ODE sampling.

Convention: tau = 0 is clean data, tau = 1 is unit-normal noise, and the
interpolation path is x_tau = (1 - tau) * x0 + tau * x1 with regression
target x1 - x0. Sampling integrates tau from 1 down to 0 on a shifted grid
that concentrates steps near high noise. Each temporal chunk carries its own
noise level; chunks acting as context stay clean (tau = 0) throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import torch

TARGET = "target"
CONTEXT = "context"

# model_fn(noised_latent (nC*f, H', W', C'), taus (nC,)) -> velocity, same shape
ModelFn = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]


def shift_time(u, s: float):
    """Monotone reparameterization tau = s*u / (1 + (s-1)*u); fixes 0 and 1."""
    if s < 1.0:
        raise ValueError(f"shift must be >= 1, got {s}")
    return s * u / (1.0 + (s - 1.0) * u)


def interpolate_path(x0, x1, tau: float):
    """Linear path between data (tau=0) and noise (tau=1)."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    return (1.0 - tau) * x0 + tau * x1


@dataclass(frozen=True)
class ShiftSchedule:
    """Euler grid: tau_k = shift(u_k) over uniform u_k from 1 down to 0."""

    shift: float
    step_count: int

    def __post_init__(self):
        if self.shift < 1.0:
            raise ValueError(f"shift must be >= 1, got {self.shift}")
        if self.step_count < 1:
            raise ValueError(f"step_count must be >= 1, got {self.step_count}")

    @property
    def knots(self) -> np.ndarray:
        u = 1.0 - np.arange(self.step_count + 1, dtype=np.float64) / self.step_count
        return shift_time(u, self.shift)


@dataclass(frozen=True)
class NoiseLevelAssignment:
    """Per-chunk noise levels; context chunks are pinned clean."""

    taus: tuple[float, ...]
    roles: tuple[str, ...]

    def __post_init__(self):
        if len(self.taus) != len(self.roles):
            raise ValueError("taus and roles must have equal length")
        for tau, role in zip(self.taus, self.roles):
            if not 0.0 <= tau <= 1.0:
                raise ValueError(f"tau {tau} outside [0, 1]")
            if role not in (TARGET, CONTEXT):
                raise ValueError(f"unknown role {role!r}")
            if role == CONTEXT and tau != 0.0:
                raise ValueError(f"context chunk must have tau=0, got {tau}")


def draw_chunk_taus(rng: np.random.Generator, n_chunks: int, shift: float) -> np.ndarray:
    """Independent per-chunk noise levels: u ~ U(0,1) through the shift map."""
    return shift_time(rng.uniform(0.0, 1.0, size=n_chunks), shift)


def fm_loss(model_fn: ModelFn, gt_latent: torch.Tensor, chunk_len_latent: int,
            rng: np.random.Generator, shift: float = 1.0,
            ) -> tuple[torch.Tensor, list[float]]:
    """Velocity-regression loss with an independent noise level per chunk.

    gt_latent: (T', H', W', C') with T' divisible by chunk_len_latent. Draws
    per-chunk tau and unit-normal noise from ``rng``, noises every chunk, and
    regresses the model's output on (noise - data) with elementwise MSE.
    Returns the scalar loss and the per-chunk mean squared errors.
    """
    t_lat = gt_latent.shape[0]
    if t_lat % chunk_len_latent != 0:
        raise ValueError(f"T'={t_lat} not divisible by chunk_len_latent={chunk_len_latent}")
    n_chunks = t_lat // chunk_len_latent

    taus_np = draw_chunk_taus(rng, n_chunks, shift)
    noise = torch.from_numpy(
        rng.standard_normal(tuple(gt_latent.shape)).astype(np.float32)
    ).to(gt_latent.dtype)
    taus = torch.from_numpy(taus_np.astype(np.float64)).to(gt_latent.dtype)

    per_frame_tau = taus.repeat_interleave(chunk_len_latent).view(-1, 1, 1, 1)
    noised = (1.0 - per_frame_tau) * gt_latent + per_frame_tau * noise
    target = noise - gt_latent

    pred = model_fn(noised, taus)
    if pred.shape != gt_latent.shape:
        raise ValueError(f"model output {tuple(pred.shape)} does not match latent "
                         f"{tuple(gt_latent.shape)}")
    sq = (pred - target) ** 2
    per_chunk = [float(sq[i * chunk_len_latent : (i + 1) * chunk_len_latent].mean())
                 for i in range(n_chunks)]
    return sq.mean(), per_chunk


def euler_sample(model_fn: ModelFn, roles: Sequence[str],
                 context_latents: Sequence[Optional[torch.Tensor]],
                 chunk_shape: tuple[int, ...], schedule: ShiftSchedule,
                 rng: np.random.Generator) -> list[torch.Tensor]:
    """Integrate the learned velocity field from noise to data.

    ``roles[i]`` marks window chunk i as TARGET (generated) or CONTEXT (held
    clean at its given latent). Targets start from unit-normal noise at tau=1
    and step x <- x - (tau_k - tau_{k+1}) * v; contexts are never modified.
    Returns the generated target latents in window order.
    """
    n_chunks = len(roles)
    if len(context_latents) != n_chunks:
        raise ValueError("context_latents must align with roles")
    f = chunk_shape[0]
    slabs: list[torch.Tensor] = []
    for i, role in enumerate(roles):
        if role == CONTEXT:
            lat = context_latents[i]
            if lat is None:
                raise ValueError(f"missing context latent for window chunk {i}")
            if tuple(lat.shape) != tuple(chunk_shape):
                raise ValueError(f"context latent {tuple(lat.shape)} != chunk shape "
                                 f"{tuple(chunk_shape)}")
            slabs.append(lat.clone())
        elif role == TARGET:
            slabs.append(torch.from_numpy(
                rng.standard_normal(chunk_shape).astype(np.float32)))
        else:
            raise ValueError(f"unknown role {role!r}")

    x = torch.cat(slabs, dim=0)
    target_ids = [i for i, r in enumerate(roles) if r == TARGET]
    context_ids = [i for i, r in enumerate(roles) if r == CONTEXT]
    knots = schedule.knots

    for k in range(schedule.step_count):
        taus = torch.zeros(n_chunks, dtype=x.dtype)
        taus[target_ids] = float(knots[k])
        v = model_fn(x, taus)
        d_tau = float(knots[k] - knots[k + 1])
        for i in target_ids:
            x[i * f : (i + 1) * f] -= d_tau * v[i * f : (i + 1) * f]

    for i in context_ids:
        assert torch.equal(x[i * f : (i + 1) * f], context_latents[i]), \
            "context latent was modified during sampling"
    return [x[i * f : (i + 1) * f].clone() for i in target_ids]
