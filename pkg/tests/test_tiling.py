import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from framefill.memory import WorkingSetMeter
from framefill.tiling import (GeometryError, IdentityCodec, LatentGrid, blend_ramp,
                              load_latent_grid, plan_chunks, plan_tiles,
                              save_latent_grid, tiled_decode, tiled_encode)


def test_plan_512_256_192():
    plan = plan_tiles(512, 512, 256, 192)
    assert plan.row_origins == (0, 192, 384)
    extents = [(o, min(o + 256, 512)) for o in plan.row_origins]
    assert extents == [(0, 256), (192, 448), (384, 512)]


def test_plan_single_tile():
    plan = plan_tiles(64, 64, 64, 64)
    assert plan.origins == ((0, 0),)


def test_plan_clipped_edges():
    plan = plan_tiles(10, 10, 4, 3)
    assert plan.row_origins == (0, 3, 6, 9)
    assert plan.tile_extent(9, 4, 10) == 1


def test_plan_errors():
    with pytest.raises(GeometryError):
        plan_tiles(10, 10, 4, 5)  # stride > tile
    with pytest.raises(GeometryError):
        plan_tiles(10, 10, 0, 0)


def test_plan_covers_every_pixel():
    plan = plan_tiles(37, 23, 8, 5)
    cover = np.zeros((37, 23), dtype=int)
    for r, c in plan.origins:
        cover[r : r + 8, c : c + 8] += 1
    assert (cover >= 1).all()


def test_chunk_plan():
    chunks = plan_chunks(24, 8)
    assert (chunks.chunk_len, chunks.chunk_count) == (8, 3)
    with pytest.raises(GeometryError, match="divisible"):
        plan_chunks(25, 8)


# --- blend_ramp ---------------------------------------------------------------

def test_blend_equal_inputs_identity(rng):
    block = rng.random((2, 4, 6, 3))
    out = blend_ramp(block, block, 4, axis=1)
    assert np.allclose(out, block, atol=1e-12)


def test_blend_overlap_two():
    p = np.array([[1.0], [3.0]])
    c = np.array([[5.0], [7.0]])
    out = blend_ramp(p, c, 2, axis=0)
    assert out[0, 0] == 1.0          # weight 1 - 0/2 on prev
    assert out[1, 0] == 0.5 * 3 + 0.5 * 7


def test_blend_overlap_one_is_prev():
    p = np.array([[2.0]])
    c = np.array([[9.0]])
    assert blend_ramp(p, c, 1, axis=0)[0, 0] == 2.0


def test_blend_overlap_too_large():
    with pytest.raises(GeometryError, match="overlap"):
        blend_ramp(np.zeros((2, 1)), np.zeros((3, 1)), 3, axis=0)


# --- tiled encode/decode ------------------------------------------------------

def test_identity_single_tile_passthrough(rng):
    frames = rng.random((4, 16, 16, 3), dtype=np.float32)
    tiles = plan_tiles(16, 16, 16, 16)
    chunks = plan_chunks(4, 4)
    grid = tiled_encode(frames, IdentityCodec(3), tiles, chunks)
    assert np.array_equal(grid.values, frames)


def test_roundtrip_512_smooth_gradient():
    yy, xx = np.mgrid[0:512, 0:512] / 511.0
    frame = np.stack([yy, xx, 0.5 * (yy + xx)], axis=-1).astype(np.float32)
    frames = frame[None]
    tiles = plan_tiles(512, 512, 256, 192)
    chunks = plan_chunks(1, 1)
    codec = IdentityCodec(3)
    grid = tiled_encode(frames, codec, tiles, chunks)
    back = tiled_decode(grid, codec, tiles, chunks)
    assert np.max(np.abs(back - frames)) <= 1e-6


def test_two_chunks_layout(rng):
    frames = rng.random((8, 8, 8, 3), dtype=np.float32)
    tiles = plan_tiles(8, 8, 8, 8)
    chunks = plan_chunks(8, 4)
    grid = tiled_encode(frames, IdentityCodec(3), tiles, chunks)
    assert grid.values.shape[0] == 8
    assert grid.chunk_len_latent == 4
    assert grid.chunk_count == 2


def test_chunk_independence(rng):
    frames = rng.random((8, 12, 12, 3), dtype=np.float32)
    tiles = plan_tiles(12, 12, 8, 6)
    chunks = plan_chunks(8, 4)
    codec = IdentityCodec(3)
    base = tiled_encode(frames, codec, tiles, chunks).values
    edited = frames.copy()
    edited[4:] = rng.random((4, 12, 12, 3), dtype=np.float32)  # only chunk 1
    after = tiled_encode(edited, codec, tiles, chunks).values
    assert np.array_equal(base[:4], after[:4])
    assert not np.array_equal(base[4:], after[4:])


@given(st.integers(2, 5), st.integers(1, 4), st.integers(0, 2 ** 31 - 1))
@settings(max_examples=25, deadline=None)
def test_roundtrip_random_plans(tile_mult, stride_tiles, seed):
    r = np.random.default_rng(seed)
    tile = 4 * tile_mult
    stride = max(4, tile - 4 * stride_tiles)
    h = int(r.integers(tile, 40))
    w = int(r.integers(tile, 40))
    frames = r.random((2, h, w, 3))
    tiles = plan_tiles(h, w, tile, stride)
    chunks = plan_chunks(2, 2)
    codec = IdentityCodec(3)
    back = tiled_decode(tiled_encode(frames, codec, tiles, chunks), codec, tiles, chunks)
    assert np.max(np.abs(back - frames)) <= 1e-6


def test_partition_of_unity_float64():
    ones = np.ones((1, 50, 41, 1), dtype=np.float64)
    tiles = plan_tiles(50, 41, 12, 7)
    chunks = plan_chunks(1, 1)
    codec = IdentityCodec(1)
    enc = tiled_encode(ones, codec, tiles, chunks).values
    assert np.max(np.abs(enc - 1.0)) <= 1e-9
    dec = tiled_decode(LatentGrid(enc, 1, 1, 1, 1), codec, tiles, chunks)
    assert np.max(np.abs(dec - 1.0)) <= 1e-9


def test_constant_latent_decodes_constant():
    lat = np.full((2, 10, 10, 3), 0.7, dtype=np.float32)
    grid = LatentGrid(lat, 1, 1, 1, 3)
    tiles = plan_tiles(10, 10, 6, 4)
    chunks = plan_chunks(2, 1)
    out = tiled_decode(grid, IdentityCodec(3), tiles, chunks)
    assert np.allclose(out, 0.7, atol=1e-6)


def test_geometry_validation(rng):
    frames = rng.random((4, 16, 16, 3), dtype=np.float32)
    tiles = plan_tiles(16, 16, 16, 16)
    with pytest.raises(GeometryError, match="chunk plan"):
        tiled_encode(frames, IdentityCodec(3), tiles, plan_chunks(8, 4))

    class Stride4(IdentityCodec):
        spatial_stride = 4
        temporal_stride = 2

    with pytest.raises(GeometryError, match="divisible"):
        tiled_encode(frames, Stride4(3), plan_tiles(16, 16, 10, 10), plan_chunks(4, 4))


def test_memory_constant_across_resolutions():
    codec = IdentityCodec(3)
    peaks = []
    for size in (64, 256):
        frames = np.zeros((2, size, size, 3), dtype=np.float32)
        tiles = plan_tiles(size, size, 32, 24)
        chunks = plan_chunks(2, 2)
        meter = WorkingSetMeter()
        tiled_encode(frames, codec, tiles, chunks, meter=meter)
        peaks.append(meter.peak_bytes)
    assert peaks[0] == peaks[1]


def test_latent_grid_serialization(tmp_path, rng):
    values = rng.random((4, 8, 8, 5), dtype=np.float32)
    grid = LatentGrid(values, 2, 4, 2, 5)
    save_latent_grid(grid, tmp_path / "lat", codec_id="toy")
    back, codec_id = load_latent_grid(tmp_path / "lat")
    assert codec_id == "toy"
    assert np.array_equal(back.values, values)
    assert back.chunk_len_latent == 2
    assert (back.spatial_stride, back.temporal_stride) == (4, 2)
    # payload is raw little-endian float32
    raw = np.frombuffer((tmp_path / "lat.bin").read_bytes(), dtype="<f4")
    assert np.array_equal(raw.reshape(values.shape), values)
