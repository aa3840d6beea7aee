"""Independent numerical oracles shared by the unit and acceptance suites."""

import math

import numpy as np
import torch


def finite_diff_worst_rel_err(model: torch.nn.Module, loss_fn, *,
                              entries_per_param: int = 2, h: float = 1e-6,
                              seed: int = 0) -> float:
    """Compare reverse-mode gradients of loss_fn() against central differences.

    loss_fn must be deterministic and differentiable w.r.t. every model
    parameter that participates in it. Checks a few random coordinates of
    every parameter tensor and returns the worst relative error.
    """
    model.zero_grad(set_to_none=True)
    loss = loss_fn()
    loss.backward()
    grads = {name: (p.grad.detach().clone() if p.grad is not None
                    else torch.zeros_like(p))
             for name, p in model.named_parameters()}

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in model.named_parameters():
        flat = p.detach().reshape(-1)
        n = flat.numel()
        idxs = rng.choice(n, size=min(entries_per_param, n), replace=False)
        for idx in idxs:
            idx = int(idx)
            orig = float(flat[idx])
            with torch.no_grad():
                p.reshape(-1)[idx] = orig + h
                lo_hi = float(loss_fn())
                p.reshape(-1)[idx] = orig - h
                lo_lo = float(loss_fn())
                p.reshape(-1)[idx] = orig
            fd = (lo_hi - lo_lo) / (2.0 * h)
            ad = float(grads[name].reshape(-1)[idx])
            if max(abs(fd), abs(ad)) < 1e-7:
                continue  # below the central-difference noise floor
            rel = abs(fd - ad) / max(abs(fd), abs(ad))
            worst = max(worst, rel)
    return worst


def dense_masked_attention(q, k, v, mask: torch.Tensor) -> torch.Tensor:
    scores = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
    scores = scores.masked_fill(~mask, float("-inf"))
    return torch.softmax(scores, dim=-1) @ v
