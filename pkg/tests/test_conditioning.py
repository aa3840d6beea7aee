import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from framefill.conditioning import (ConditionLatent, KeyframeMask, build_mask,
                                    concat_condition, decode_mask, encode_mask,
                                    nn_upsample, upsampled_length, zero_pad_upsample)
from framefill.video_io import FrameSequence, downsample_temporal


def _seq(values):
    arr = np.asarray(values, dtype=np.float32).reshape(-1, 1, 1, 1)
    return FrameSequence(np.broadcast_to(arr, (arr.shape[0], 2, 2, 1)).copy())


def _firsts(seq):
    return list(seq.frames[:, 0, 0, 0])


def test_nn_upsample_identity():
    seq = _seq([0.1, 0.2, 0.3])
    out = nn_upsample(seq, 1)
    assert np.array_equal(out.frames, seq.frames)


def test_nn_upsample_two_keys_s4():
    out = nn_upsample(_seq([0.0, 1.0]), 4)
    assert out.shape[0] == 5
    assert _firsts(out) == [0.0, 0.0, 0.0, 1.0, 1.0]  # index 2 ties down


def test_nn_upsample_three_keys_s2():
    out = nn_upsample(_seq([0.0, 0.5, 1.0]), 2)
    assert _firsts(out) == [0.0, 0.0, 0.5, 0.5, 1.0]


def test_nn_upsample_piecewise_constant(rng):
    lq = FrameSequence(rng.random((4, 3, 3, 3), dtype=np.float32))
    out = nn_upsample(lq, 3)
    diffs = np.abs(np.diff(out.frames, axis=0)).reshape(out.shape[0] - 1, -1).max(axis=1)
    assert (diffs > 0).sum() == 3  # one jump per keyframe transition


@given(st.integers(1, 6), st.integers(2, 5), st.integers(0, 2 ** 31 - 1))
@settings(max_examples=25, deadline=None)
def test_keyframe_preservation(t_lq_minus1, s, seed):
    r = np.random.default_rng(seed)
    hq = FrameSequence(r.random((t_lq_minus1 * s + 1, 2, 2, 3), dtype=np.float32))
    lq = downsample_temporal(hq, s)
    up = nn_upsample(lq, s)
    assert up.shape == hq.shape
    assert np.array_equal(up.frames[::s], hq.frames[::s])  # bit-exact at keyframes


def test_zero_pad_upsample():
    out = zero_pad_upsample(_seq([0.5, 1.0]), 2)
    assert _firsts(out) == [0.5, 0.0, 1.0]


def test_build_mask_examples():
    m = build_mask(5, 4, 2, 2)
    assert np.array_equal(m.values[:, 0, 0, 0], [1, 0, 0, 0, 1])
    assert np.all(build_mask(3, 1, 2, 2).values == 1.0)
    m9 = build_mask(9, 2, 2, 2)
    assert m9.values[:, 0, 0, 0].sum() == 5


def test_build_mask_divisibility():
    with pytest.raises(ValueError, match="divisible"):
        build_mask(6, 4, 2, 2)


def test_encode_mask_identity():
    m = build_mask(3, 1, 4, 4)
    out = encode_mask(m, 1, 1)
    assert np.array_equal(out, m.values)


def test_encode_mask_time_to_channels():
    m = build_mask(5, 4, 2, 2)
    out = encode_mask(KeyframeMask(m.values[:4], 4), 1, 4)
    assert out.shape == (1, 2, 2, 4)
    assert np.array_equal(out[0, 0, 0], [1, 0, 0, 0])


def test_encode_mask_interleave_rule(rng):
    values = (rng.random((8, 4, 4, 1)) > 0.5).astype(np.float32)
    # frame-constant masks: broadcast each frame's first pixel
    values = np.broadcast_to(values[:, :1, :1, :], (8, 4, 4, 1)).copy()
    out = encode_mask(KeyframeMask(values, 1), 2, 2)
    assert out.shape == (4, 2, 2, 2)
    for k in range(4):
        for c in range(2):
            assert np.all(out[k, :, :, c] == values[2 * k + c, 0, 0, 0])


def test_mask_roundtrip_exact():
    m = build_mask(9, 2, 8, 8)
    pad = np.concatenate([m.values, np.ones((1, 8, 8, 1), np.float32)], axis=0)
    enc = encode_mask(KeyframeMask(pad, 2), 4, 2)
    dec = decode_mask(enc, 4, 2)
    assert np.array_equal(dec, pad)
    assert set(np.unique(enc)) <= {0.0, 1.0}


def test_concat_condition_order(rng):
    noised = rng.random((2, 4, 4, 4), dtype=np.float32)
    lq = rng.random((2, 4, 4, 4), dtype=np.float32)
    mask = rng.random((2, 4, 4, 2), dtype=np.float32)
    cond = ConditionLatent(lq, mask)
    out = concat_condition(noised, cond)
    assert out.shape[-1] == 10  # C' + C' + r_t
    assert np.array_equal(out[..., :4], noised)
    assert np.array_equal(out[..., 4:8], lq)
    assert np.array_equal(out[..., 8:], mask)
    swapped = np.concatenate([noised, mask, lq], axis=-1)
    assert not np.array_equal(out, swapped)  # order is pinned


def test_concat_condition_dim_mismatch(rng):
    cond = ConditionLatent(rng.random((2, 4, 4, 4), dtype=np.float32),
                           rng.random((2, 4, 4, 2), dtype=np.float32))
    with pytest.raises(ValueError, match="disagree"):
        concat_condition(rng.random((3, 4, 4, 4), dtype=np.float32), cond)


def test_upsampled_length():
    assert upsampled_length(17, 4) == 65
    assert upsampled_length(2, 4) == 5
