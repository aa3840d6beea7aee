"""Hybrid sparse attention: sliding window over spatial chunks, dense in time.

Tokens live on a (temporal chunk, spatial chunk row, spatial chunk col) grid
with a fixed number of tokens per chunk, laid out chunk-major. A query may
attend a key iff their spatial chunk coordinates are within a Chebyshev
radius; temporal chunk distance is never constrained. The operator enumerates
allowed chunk pairs instead of materializing a full token-by-token score
table, so per-query work is bounded by the window, not the frame size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch


@dataclass(frozen=True)
class WindowSpec:
    """Sliding-window radius in spatial-chunk units (Chebyshev metric)."""

    radius: int

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError(f"window radius must be >= 0, got {self.radius}")


@dataclass(frozen=True)
class ChunkGrid:
    """Chunk-major token layout over an (nT, nH, nW) chunk lattice."""

    nT: int
    nH: int
    nW: int
    tokens_per_chunk: int

    def __post_init__(self):
        if min(self.nT, self.nH, self.nW, self.tokens_per_chunk) < 1:
            raise ValueError(f"chunk grid dims must be positive, got {self}")

    @property
    def chunk_count(self) -> int:
        return self.nT * self.nH * self.nW

    @property
    def token_count(self) -> int:
        return self.chunk_count * self.tokens_per_chunk

    def chunk_of_token(self, token: int) -> tuple[int, int, int]:
        """Map a token index to its (temporal, row, col) chunk coordinates."""
        if not 0 <= token < self.token_count:
            raise IndexError(f"token {token} out of range [0, {self.token_count})")
        chunk = token // self.tokens_per_chunk
        tau, rem = divmod(chunk, self.nH * self.nW)
        return (tau,) + divmod(rem, self.nW)

    def chunk_id(self, tau: int, i: int, j: int) -> int:
        return (tau * self.nH + i) * self.nW + j

    def token_slice(self, tau: int, i: int, j: int) -> slice:
        c = self.chunk_id(tau, i, j)
        return slice(c * self.tokens_per_chunk, (c + 1) * self.tokens_per_chunk)


def allowed(grid: ChunkGrid, spec: WindowSpec, q_token: int, k_token: int) -> bool:
    """True iff the key's spatial chunk lies inside the query's window."""
    _, qi, qj = grid.chunk_of_token(q_token)
    _, ki, kj = grid.chunk_of_token(k_token)
    return abs(qi - ki) <= spec.radius and abs(qj - kj) <= spec.radius


def window_neighbors(grid: ChunkGrid, spec: WindowSpec, i: int, j: int) -> list[tuple[int, int]]:
    """Spatial chunks inside the window around (i, j), clipped at grid edges."""
    r = spec.radius
    return [(ii, jj)
            for ii in range(max(0, i - r), min(grid.nH, i + r + 1))
            for jj in range(max(0, j - r), min(grid.nW, j + r + 1))]


def sparse_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor,
                     grid: ChunkGrid, spec: WindowSpec,
                     temporal_dense: bool = True) -> torch.Tensor:
    """Windowed attention over chunk-major tokens.

    q, k, v: (..., N, d) with N == grid.token_count; any leading batch/head
    dims. Keys outside the spatial window are never touched. With
    ``temporal_dense=False`` attention is additionally restricted to the
    query's own temporal chunk (diagnostic mode for wiring tests).
    """
    n = grid.token_count
    if q.shape[-2] != n or k.shape[-2] != n or v.shape[-2] != n:
        raise ValueError(f"expected {n} tokens, got q/k/v with "
                         f"{q.shape[-2]}/{k.shape[-2]}/{v.shape[-2]}")
    scale = 1.0 / math.sqrt(q.shape[-1])
    tpc = grid.tokens_per_chunk

    if temporal_dense and spec.radius >= max(grid.nH, grid.nW) - 1:
        # window covers the whole grid: plain dense attention, no gathers
        scores = torch.matmul(q, k.transpose(-1, -2)) * scale
        return torch.matmul(torch.softmax(scores, dim=-1), v)

    out = torch.empty_like(q)

    for i in range(grid.nH):
        for j in range(grid.nW):
            key_chunks = window_neighbors(grid, spec, i, j)
            assert key_chunks, "a chunk always falls inside its own window"
            if temporal_dense:
                q_idx = _gather_indices(grid, [(i, j)], range(grid.nT), tpc, q.device)
                k_idx = _gather_indices(grid, key_chunks, range(grid.nT), tpc, q.device)
                out.index_copy_(-2, q_idx, _attend(q, k, v, q_idx, k_idx, scale))
            else:
                for tau in range(grid.nT):
                    q_idx = _gather_indices(grid, [(i, j)], [tau], tpc, q.device)
                    k_idx = _gather_indices(grid, key_chunks, [tau], tpc, q.device)
                    out.index_copy_(-2, q_idx, _attend(q, k, v, q_idx, k_idx, scale))
    return out


def _gather_indices(grid: ChunkGrid, spatial: list[tuple[int, int]], taus,
                    tpc: int, device: torch.device) -> torch.Tensor:
    chunks = sorted(grid.chunk_id(tau, i, j) for tau in taus for i, j in spatial)
    base = torch.tensor(chunks, dtype=torch.long, device=device) * tpc
    return (base[:, None] + torch.arange(tpc, device=device)[None, :]).reshape(-1)


def _attend(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor,
            q_idx: torch.Tensor, k_idx: torch.Tensor, scale: float) -> torch.Tensor:
    qg = q.index_select(-2, q_idx)
    kg = k.index_select(-2, k_idx)
    vg = v.index_select(-2, k_idx)
    scores = torch.matmul(qg, kg.transpose(-1, -2)) * scale
    return torch.matmul(torch.softmax(scores, dim=-1), vg)


def flop_estimate(grid: ChunkGrid, spec: WindowSpec) -> int:
    """Query-key chunk pairs times tokens_per_chunk^2.

    Linear in nH*nW for a fixed radius, quadratic in nT (time is dense).
    """
    spatial_pairs = sum(len(window_neighbors(grid, spec, i, j))
                        for i in range(grid.nH) for j in range(grid.nW))
    return spatial_pairs * grid.nT * grid.nT * grid.tokens_per_chunk ** 2
