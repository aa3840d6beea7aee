"""Instrumented accounting of transient working buffers.

The tiled codec routes every per-tile scratch allocation through a meter so
tests can assert that peak working-set size depends on tile geometry, not on
frame resolution.
"""

from __future__ import annotations

import numpy as np


class WorkingSetMeter:
    """Tracks live bytes of registered scratch buffers and their peak."""

    def __init__(self) -> None:
        self.current_bytes = 0
        self.peak_bytes = 0
        self.alloc_count = 0

    def alloc(self, nbytes: int) -> None:
        self.alloc_count += 1
        self.current_bytes += int(nbytes)
        if self.current_bytes > self.peak_bytes:
            self.peak_bytes = self.current_bytes

    def release(self, nbytes: int) -> None:
        self.current_bytes -= int(nbytes)

    def track(self, arr: np.ndarray) -> np.ndarray:
        """Register an array as live working space; returns it unchanged."""
        self.alloc(arr.nbytes)
        return arr

    def untrack(self, arr: np.ndarray) -> None:
        self.release(arr.nbytes)


class NullMeter(WorkingSetMeter):
    """Meter that ignores all traffic; default when instrumentation is off."""

    def alloc(self, nbytes: int) -> None:  # noqa: D102
        pass

    def release(self, nbytes: int) -> None:  # noqa: D102
        pass
