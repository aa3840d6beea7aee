import numpy as np
import pytest
import torch

from framefill.attention import WindowSpec
from framefill.denoiser import (Denoiser, DenoiserConfig, init_denoiser_weights,
                                patchify, positional_encoding, unpatchify)

from oracles import finite_diff_worst_rel_err

TINY = DenoiserConfig(model_dim=8, head_count=2, layer_count=2, token_patch=1)


def make_model(cfg=TINY, in_ch=4, out_ch=2, f=2, spatial=None, radius=1, seed=0):
    model = Denoiser(cfg, in_channels=in_ch, out_channels=out_ch,
                     chunk_len_latent=f, spatial_chunk=spatial,
                     window=WindowSpec(radius))
    init_denoiser_weights(model, seed)
    return model


def test_config_validation():
    with pytest.raises(ValueError, match="divisible"):
        DenoiserConfig(model_dim=10, head_count=4)
    with pytest.raises(ValueError, match="layer_count"):
        DenoiserConfig(layer_count=0)


def test_patchify_token_per_pixel(rng):
    x = torch.from_numpy(rng.random((1, 2, 4, 4, 3), dtype=np.float32))
    tokens, grid, pos = patchify(x, 1, 2)
    assert tokens.shape == (1, 2 * 4 * 4, 3)
    assert grid.token_count == 32
    assert pos.shape == (32, 3)


def test_patchify_roundtrip(rng):
    x = torch.from_numpy(rng.random((2, 4, 8, 8, 5), dtype=np.float32))
    tokens, grid, _ = patchify(x, 2, 2, (4, 8))
    back = unpatchify(tokens, grid, 2, 2, (2, 4), 5)
    assert torch.equal(back, x)


def test_patchify_chunk_grid_example(rng):
    # 2 temporal chunks of an 8x8 latent with patch 2: per chunk a 2x4x4 token grid
    x = torch.from_numpy(rng.random((1, 4, 8, 8, 3), dtype=np.float32))
    tokens, grid, _ = patchify(x, 2, 2)
    assert grid.nT == 2
    assert grid.tokens_per_chunk == 2 * 4 * 4


def test_patchify_divisibility_errors(rng):
    x = torch.from_numpy(rng.random((1, 3, 8, 8, 3), dtype=np.float32))
    with pytest.raises(ValueError, match="chunk_len_latent"):
        patchify(x, 2, 2)
    with pytest.raises(ValueError, match="patch"):
        patchify(torch.zeros(1, 2, 6, 6, 3), 4, 2)


def test_forward_shape_and_determinism(rng):
    model = make_model()
    x = torch.from_numpy(rng.random((2, 4, 4, 4, 4), dtype=np.float32))
    taus = torch.from_numpy(rng.random((2, 2), dtype=np.float32))
    a = model(x, taus)
    b = model(x, taus)
    assert a.shape == (2, 4, 4, 4, 2)
    assert torch.equal(a, b)


def test_zeroed_head_gives_zero_output(rng):
    model = make_model(seed=1)
    # at init the output head is zero-initialized already
    x = torch.from_numpy(rng.random((1, 4, 4, 4, 4), dtype=np.float32))
    taus = torch.from_numpy(rng.random((1, 2), dtype=np.float32))
    assert torch.equal(model(x, taus), torch.zeros(1, 4, 4, 4, 2))
    # and stays zero if re-zeroed after perturbing everything else
    with torch.no_grad():
        for p in model.parameters():
            p.add_(0.01)
        model.head.weight.zero_()
        model.head.bias.zero_()
    assert torch.equal(model(x, taus), torch.zeros(1, 4, 4, 4, 2))


def _perturbed(model, x, taus, **kw):
    with torch.no_grad():
        return model(x, taus, **kw)


def test_positional_encoding_breaks_permutation(rng):
    model = make_model(seed=2)
    with torch.no_grad():  # make blocks non-trivial (gates start at zero)
        for p in model.parameters():
            p.add_(torch.from_numpy(rng.standard_normal(tuple(p.shape))
                                    .astype(np.float32)) * 0.05)
    x = torch.from_numpy(rng.random((1, 4, 4, 4, 4), dtype=np.float32))
    taus = torch.from_numpy(rng.random((1, 2), dtype=np.float32))
    base = _perturbed(model, x, taus)
    # swap two latent rows inside every chunk, then swap the output back
    perm = [1, 0, 2, 3]
    out = _perturbed(model, x[:, :, perm], taus)[:, :, perm]
    assert not torch.allclose(out, base, atol=1e-6)


def test_tau_locality_with_temporal_attention_removed(rng):
    model = make_model(seed=3)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(torch.from_numpy(rng.standard_normal(tuple(p.shape))
                                    .astype(np.float32)) * 0.05)
    x = torch.from_numpy(rng.random((1, 6, 4, 4, 4), dtype=np.float32))
    taus = torch.tensor([[0.2, 0.5, 0.9]])
    taus2 = torch.tensor([[0.2, 0.5, 0.1]])  # change only chunk 2
    a = _perturbed(model, x, taus, temporal_dense=False)
    b = _perturbed(model, x, taus2, temporal_dense=False)
    assert torch.equal(a[:, :4], b[:, :4])       # chunks 0 and 1 untouched
    assert not torch.allclose(a[:, 4:], b[:, 4:])
    # with dense temporal attention the change propagates everywhere
    c = _perturbed(model, x, taus2)
    d = _perturbed(model, x, taus)
    assert not torch.allclose(c[:, :4], d[:, :4])


def test_taus_shape_check(rng):
    model = make_model()
    x = torch.from_numpy(rng.random((1, 4, 4, 4, 4), dtype=np.float32))
    with pytest.raises(ValueError, match="taus"):
        model(x, torch.zeros(1, 3))


def test_velocity_shape_across_configs(rng):
    for patch, spatial, f in ((1, None, 2), (2, (4, 4), 1)):
        cfg = DenoiserConfig(model_dim=8, head_count=2, layer_count=1, token_patch=patch)
        model = make_model(cfg, in_ch=5, out_ch=3, f=f, spatial=spatial)
        x = torch.from_numpy(rng.random((1, 2 * f, 8, 8, 5), dtype=np.float32))
        taus = torch.from_numpy(rng.random((1, 2), dtype=np.float32))
        assert model(x, taus).shape == (1, 2 * f, 8, 8, 3)


def test_gradients_match_finite_differences(rng):
    model = make_model(seed=4)
    model.double()
    with torch.no_grad():  # move off the zero-init saddle
        for p in model.parameters():
            p.add_(torch.from_numpy(rng.standard_normal(tuple(p.shape))) * 0.05)
    x = torch.from_numpy(rng.random((1, 4, 4, 4, 4)))
    taus = torch.from_numpy(rng.random((1, 2)))
    target = torch.from_numpy(rng.standard_normal((1, 4, 4, 4, 2)))

    def loss_fn():
        return ((model(x, taus) - target) ** 2).mean()

    worst = finite_diff_worst_rel_err(model, loss_fn, entries_per_param=2, h=1e-6)
    assert worst < 1e-3


def test_positional_encoding_properties():
    pos = torch.tensor([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    enc = positional_encoding(pos, 16)
    assert enc.shape == (4, 16)
    assert not torch.allclose(enc[0], enc[1])
    assert not torch.allclose(enc[2], enc[3])
