"""Process-level torch knobs shared by training, inference, and the CLI."""

from __future__ import annotations

import numpy as np
import torch

_configured = False


def configure_torch(threads: int | None = None) -> None:
    """Flush denormals (orders-of-magnitude faster CPU kernels here) and
    optionally cap worker threads. Idempotent."""
    global _configured
    if not _configured:
        # populate numpy's lazy float info before denormals get flushed,
        # otherwise its first use afterwards emits subnormal warnings
        np.finfo(np.float32).smallest_subnormal
        np.finfo(np.float64).smallest_subnormal
        torch.set_flush_denormal(True)
        _configured = True
    if threads is not None:
        torch.set_num_threads(max(1, threads))
