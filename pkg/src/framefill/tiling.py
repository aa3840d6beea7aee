"""Spatial tiling with linear-ramp seam blending and temporal chunking.

Frames are processed as overlapping spatial tiles and contiguous,
non-overlapping temporal chunks. Each (chunk, tile) block is encoded
independently by a pluggable frame codec; overlaps are blended with a linear
ramp (vertical blend against the tile above, then horizontal against the tile
to the left) and only each tile's stride region is kept, yielding a compact
latent grid and a seam-free reconstruction on decode.

Working memory stays proportional to a single tile-chunk block: neighbor
tiles needed for blending are re-encoded on demand instead of being cached,
so the peak transient footprint does not grow with frame resolution.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Protocol, runtime_checkable

import numpy as np

from .memory import NullMeter, WorkingSetMeter
from .serialization import read_payload, write_payload


class GeometryError(Exception):
    pass


def _axis_origins(extent: int, stride: int) -> tuple[int, ...]:
    return tuple(range(0, extent, stride))


@dataclass(frozen=True)
class TilePlan:
    """Deterministic spatial tiling: origins on a stride lattice, edge tiles
    clipped at the frame boundary."""

    frame_h: int
    frame_w: int
    tile_h: int
    tile_w: int
    stride_h: int
    stride_w: int
    origins: tuple[tuple[int, int], ...]

    @property
    def row_origins(self) -> tuple[int, ...]:
        return _axis_origins(self.frame_h, self.stride_h)

    @property
    def col_origins(self) -> tuple[int, ...]:
        return _axis_origins(self.frame_w, self.stride_w)

    def tile_extent(self, origin: int, tile: int, frame: int) -> int:
        return min(origin + tile, frame) - origin


def plan_tiles(frame_h: int, frame_w: int, tile: int | tuple[int, int],
               stride: int | tuple[int, int]) -> TilePlan:
    tile_h, tile_w = (tile, tile) if isinstance(tile, int) else tile
    stride_h, stride_w = (stride, stride) if isinstance(stride, int) else stride
    if min(tile_h, tile_w, stride_h, stride_w, frame_h, frame_w) <= 0:
        raise GeometryError("tile, stride, and frame dims must be positive")
    if stride_h > tile_h or stride_w > tile_w:
        raise GeometryError(
            f"stride ({stride_h}, {stride_w}) must not exceed tile ({tile_h}, {tile_w})"
        )
    rows = _axis_origins(frame_h, stride_h)
    cols = _axis_origins(frame_w, stride_w)
    origins = tuple((r, c) for r in rows for c in cols)
    return TilePlan(frame_h, frame_w, tile_h, tile_w, stride_h, stride_w, origins)


@dataclass(frozen=True)
class ChunkPlan:
    """Contiguous, non-overlapping temporal chunks of fixed length."""

    chunk_len: int
    chunk_count: int
    total_frames: int

    def __post_init__(self):
        if self.chunk_len * self.chunk_count != self.total_frames:
            raise GeometryError(
                f"chunk_len*chunk_count = {self.chunk_len * self.chunk_count} "
                f"!= total_frames = {self.total_frames}"
            )


def plan_chunks(total_frames: int, chunk_len: int) -> ChunkPlan:
    if chunk_len < 1:
        raise GeometryError(f"chunk_len must be >= 1, got {chunk_len}")
    if total_frames % chunk_len != 0:
        raise GeometryError(
            f"total_frames={total_frames} not divisible by chunk_len={chunk_len}"
        )
    return ChunkPlan(chunk_len, total_frames // chunk_len, total_frames)


@runtime_checkable
class FrameCodec(Protocol):
    """Per-block codec over a (frames, rows, cols, channels) array."""

    spatial_stride: int
    temporal_stride: int
    latent_channels: int

    def encode(self, block: np.ndarray) -> np.ndarray: ...

    def decode(self, latent: np.ndarray) -> np.ndarray: ...


class IdentityCodec:
    """Exact pass-through codec (stride 1, latent == pixels)."""

    spatial_stride = 1
    temporal_stride = 1

    def __init__(self, channels: int = 3):
        self.latent_channels = channels

    def encode(self, block: np.ndarray) -> np.ndarray:
        return block.copy()

    def decode(self, latent: np.ndarray) -> np.ndarray:
        return latent.copy()


@dataclass(frozen=True)
class LatentGrid:
    """Compact latent video: (T', H', W', C') values plus codec geometry."""

    values: np.ndarray
    chunk_len_latent: int
    spatial_stride: int
    temporal_stride: int
    latent_channels: int

    def __post_init__(self):
        v = self.values
        if v.ndim != 4:
            raise GeometryError(f"latent values must be 4-D, got shape {v.shape}")
        if v.shape[0] % self.chunk_len_latent != 0:
            raise GeometryError(
                f"latent frame count {v.shape[0]} not divisible by chunk_len_latent "
                f"{self.chunk_len_latent}"
            )
        if v.shape[3] != self.latent_channels:
            raise GeometryError(
                f"latent has {v.shape[3]} channels, metadata says {self.latent_channels}"
            )

    @property
    def chunk_count(self) -> int:
        return self.values.shape[0] // self.chunk_len_latent

    def chunk(self, i: int) -> np.ndarray:
        f = self.chunk_len_latent
        return self.values[i * f : (i + 1) * f]


def save_latent_grid(grid: LatentGrid, base: str | Path, codec_id: str = "") -> None:
    write_payload(base, {"values": grid.values}, meta={
        "dims": list(grid.values.shape),
        "strides": {"spatial": grid.spatial_stride, "temporal": grid.temporal_stride},
        "chunk_len_latent": grid.chunk_len_latent,
        "codec_id": codec_id,
    })


def load_latent_grid(base: str | Path) -> tuple[LatentGrid, str]:
    arrays, meta = read_payload(base)
    grid = LatentGrid(
        values=arrays["values"],
        chunk_len_latent=int(meta["chunk_len_latent"]),
        spatial_stride=int(meta["strides"]["spatial"]),
        temporal_stride=int(meta["strides"]["temporal"]),
        latent_channels=int(arrays["values"].shape[3]),
    )
    return grid, meta.get("codec_id", "")


# ---------------------------------------------------------------------------
# Ramp blending
# ---------------------------------------------------------------------------

def blend_ramp(prev: np.ndarray, cur: np.ndarray, overlap: int, axis: int = 0) -> np.ndarray:
    """Mix prev's trailing slices into cur's leading slices over the overlap.

    out[k] = prev[-overlap + k] * (1 - k/overlap) + cur[k] * (k/overlap),
    so offset 0 is pure prev and the weight shifts linearly toward cur.
    """
    if overlap > prev.shape[axis] or overlap > cur.shape[axis]:
        raise GeometryError(
            f"overlap {overlap} exceeds extents {prev.shape[axis]}, {cur.shape[axis]} "
            f"along axis {axis}"
        )
    if overlap == 0:
        return cur.take(range(0), axis=axis)
    p = prev.take(range(prev.shape[axis] - overlap, prev.shape[axis]), axis=axis)
    c = cur.take(range(overlap), axis=axis)
    shape = [1] * cur.ndim
    shape[axis] = overlap
    w = (np.arange(overlap, dtype=np.float64) / overlap).reshape(shape).astype(cur.dtype)
    return p * (1 - w) + c * w


# ---------------------------------------------------------------------------
# Tiled encode/decode
# ---------------------------------------------------------------------------

def _check_encode_geometry(frames: np.ndarray, codec: FrameCodec,
                           tiles: TilePlan, chunks: ChunkPlan) -> None:
    t, h, w, _ = frames.shape
    if (h, w) != (tiles.frame_h, tiles.frame_w):
        raise GeometryError(f"frames are {h}x{w} but plan expects "
                            f"{tiles.frame_h}x{tiles.frame_w}")
    if t != chunks.total_frames:
        raise GeometryError(f"{t} frames but chunk plan covers {chunks.total_frames}")
    rs, rt = codec.spatial_stride, codec.temporal_stride
    if chunks.chunk_len % rt != 0:
        raise GeometryError(f"chunk_len {chunks.chunk_len} not divisible by temporal "
                            f"stride {rt}")
    for v, what in ((tiles.tile_h, "tile_h"), (tiles.tile_w, "tile_w"),
                    (tiles.stride_h, "stride_h"), (tiles.stride_w, "stride_w"),
                    (h, "frame_h"), (w, "frame_w")):
        if v % rs != 0:
            raise GeometryError(f"{what}={v} not divisible by spatial stride {rs}")


def _encode_block(frames: np.ndarray, codec: FrameCodec, r0: int, r1: int,
                  c0: int, c1: int, meter: WorkingSetMeter) -> np.ndarray:
    block = meter.track(np.ascontiguousarray(frames[:, r0:r1, c0:c1, :]))
    latent = meter.track(codec.encode(block))
    meter.untrack(block)
    return latent


def tiled_encode(frames: np.ndarray, codec: FrameCodec, tiles: TilePlan,
                 chunks: ChunkPlan, meter: Optional[WorkingSetMeter] = None) -> LatentGrid:
    """Encode a whole video tile-by-tile into a compact latent grid.

    Each tile is blended against freshly re-encoded above/left neighbors and
    cropped to its stride region, so transient buffers stay tile-sized.
    """
    meter = meter or NullMeter()
    _check_encode_geometry(frames, codec, tiles, chunks)
    rs, rt = codec.spatial_stride, codec.temporal_stride
    t, h, w, _ = frames.shape
    f_lat = chunks.chunk_len // rt
    out = np.empty((t // rt, h // rs, w // rs, codec.latent_channels), dtype=frames.dtype)

    rows, cols = tiles.row_origins, tiles.col_origins
    for ci in range(chunks.chunk_count):
        pix = frames[ci * chunks.chunk_len : (ci + 1) * chunks.chunk_len]
        for ri, r in enumerate(rows):
            r_end = min(r + tiles.tile_h, h)
            for cj, c in enumerate(cols):
                c_end = min(c + tiles.tile_w, w)
                cur = _encode_block(pix, codec, r, r_end, c, c_end, meter)
                if ri > 0:
                    above_end = min(rows[ri - 1] + tiles.tile_h, h)
                    v_over = (above_end - r) // rs
                    above = _encode_block(pix, codec, rows[ri - 1], above_end, c, c_end, meter)
                    cur[:, :v_over] = blend_ramp(above, cur, v_over, axis=1)
                    meter.untrack(above)
                if cj > 0:
                    left_end = min(cols[cj - 1] + tiles.tile_w, w)
                    h_over = (left_end - c) // rs
                    left = _encode_block(pix, codec, r, r_end, cols[cj - 1], left_end, meter)
                    cur[:, :, :h_over] = blend_ramp(left, cur, h_over, axis=2)
                    meter.untrack(left)
                keep_r = (min(r + tiles.stride_h, h) - r) // rs
                keep_c = (min(c + tiles.stride_w, w) - c) // rs
                out[ci * f_lat : (ci + 1) * f_lat,
                    r // rs : r // rs + keep_r,
                    c // rs : c // rs + keep_c] = cur[:, :keep_r, :keep_c]
                meter.untrack(cur)

    return LatentGrid(out, f_lat, rs, rt, codec.latent_channels)


def _decode_block(latent: np.ndarray, codec: FrameCodec, r0: int, r1: int,
                  c0: int, c1: int, meter: WorkingSetMeter,
                  cond_frames: Optional[np.ndarray], rs: int) -> np.ndarray:
    block = meter.track(np.ascontiguousarray(latent[:, r0:r1, c0:c1, :]))
    if cond_frames is None:
        pix = meter.track(codec.decode(block))
    else:
        cond = meter.track(np.ascontiguousarray(
            cond_frames[:, r0 * rs : r1 * rs, c0 * rs : c1 * rs, :]))
        pix = meter.track(codec.decode_cond(block, cond))  # type: ignore[attr-defined]
        meter.untrack(cond)
    meter.untrack(block)
    return pix


def tiled_decode(grid: LatentGrid, codec: FrameCodec, tiles: TilePlan,
                 chunks: ChunkPlan, meter: Optional[WorkingSetMeter] = None,
                 cond_frames: Optional[np.ndarray] = None) -> np.ndarray:
    """Invert tiled_encode: per-tile decode, pixel-space ramp blending,
    stride-region assembly.

    When ``cond_frames`` is given the codec's conditional decode path is used,
    with the matching pixel block sliced per tile.
    """
    meter = meter or NullMeter()
    rs, rt = codec.spatial_stride, codec.temporal_stride
    t_lat, h_lat, w_lat, c_lat = grid.values.shape
    if c_lat != codec.latent_channels:
        raise GeometryError(f"latent has {c_lat} channels, codec expects "
                            f"{codec.latent_channels}")
    h, w = h_lat * rs, w_lat * rs
    if (h, w) != (tiles.frame_h, tiles.frame_w):
        raise GeometryError(f"latent implies {h}x{w} frames but plan expects "
                            f"{tiles.frame_h}x{tiles.frame_w}")
    if t_lat * rt != chunks.total_frames:
        raise GeometryError(f"latent implies {t_lat * rt} frames but chunk plan "
                            f"covers {chunks.total_frames}")
    if cond_frames is not None and cond_frames.shape[:3] != (chunks.total_frames, h, w):
        raise GeometryError(f"conditioning frames shape {cond_frames.shape} does not "
                            f"match decoded video ({chunks.total_frames}, {h}, {w})")

    f_lat = grid.chunk_len_latent
    sample = None
    rows = [r // rs for r in tiles.row_origins]
    cols = [c // rs for c in tiles.col_origins]
    tile_h_lat, tile_w_lat = tiles.tile_h // rs, tiles.tile_w // rs
    out: Optional[np.ndarray] = None

    for ci in range(chunks.chunk_count):
        lat = grid.values[ci * f_lat : (ci + 1) * f_lat]
        cond = None
        if cond_frames is not None:
            cond = cond_frames[ci * chunks.chunk_len : (ci + 1) * chunks.chunk_len]
        for ri, r in enumerate(rows):
            r_end = min(r + tile_h_lat, h_lat)
            for cj, c in enumerate(cols):
                c_end = min(c + tile_w_lat, w_lat)
                cur = _decode_block(lat, codec, r, r_end, c, c_end, meter, cond, rs)
                if sample is None:
                    sample = cur
                    out = np.empty((chunks.total_frames, h, w, cur.shape[3]), dtype=cur.dtype)
                if ri > 0:
                    above_end = min(rows[ri - 1] + tile_h_lat, h_lat)
                    v_over = (above_end - r) * rs
                    above = _decode_block(lat, codec, rows[ri - 1], above_end, c, c_end,
                                          meter, cond, rs)
                    cur[:, :v_over] = blend_ramp(above, cur, v_over, axis=1)
                    meter.untrack(above)
                if cj > 0:
                    left_end = min(cols[cj - 1] + tile_w_lat, w_lat)
                    h_over = (left_end - c) * rs
                    left = _decode_block(lat, codec, r, r_end, cols[cj - 1], left_end,
                                         meter, cond, rs)
                    cur[:, :, :h_over] = blend_ramp(left, cur, h_over, axis=2)
                    meter.untrack(left)
                keep_r = min((min(r * rs + tiles.stride_h, h)) - r * rs, cur.shape[1])
                keep_c = min((min(c * rs + tiles.stride_w, w)) - c * rs, cur.shape[2])
                assert out is not None
                out[ci * chunks.chunk_len : (ci + 1) * chunks.chunk_len,
                    r * rs : r * rs + keep_r,
                    c * rs : c * rs + keep_c] = cur[:, :keep_r, :keep_c]
                meter.untrack(cur)

    assert out is not None
    return out
