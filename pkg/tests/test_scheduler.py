import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from framefill.denoiser import DenoiserConfig
from framefill.scheduler import (ErrorModel, GenerationPlan, PlanError, PlanStep,
                                 StepKind, WindowConfig, chunk_kinds,
                                 interpolated_frame_psnr, plan_causal,
                                 plan_skip_concat, repeat_previous_baseline,
                                 run_inference, simulate_error, validate_plan,
                                 write_error_csv)
from framefill.training import (DenoiserTrainSettings, VaeTrainSettings,
                                train_denoiser, train_vae)
from framefill.vae import VaeConfig
from framefill.video_io import FrameSequence, SyntheticSpec, gen_synthetic


def test_plan_causal_examples():
    p1 = plan_causal(1)
    assert len(p1.steps) == 1 and p1.steps[0].kind is StepKind.INITIAL

    p4 = plan_causal(4)
    assert [(s.targets, s.contexts) for s in p4.steps] == [
        ((0,), ()), ((1,), (0,)), ((2,), (1,)), ((3,), (2,))]
    for s in p4.steps[1:]:
        assert len(s.targets) + len(s.contexts) == 2


def test_plan_skip_concat_examples():
    p5 = plan_skip_concat(5)
    assert [(s.targets, s.contexts, s.kind) for s in p5.steps] == [
        ((0,), (), StepKind.SKIP),
        ((2,), (), StepKind.SKIP),
        ((1,), (0, 2), StepKind.CONCATENATE),
        ((4,), (), StepKind.SKIP),
        ((3,), (2, 4), StepKind.CONCATENATE)]

    p1 = plan_skip_concat(1)
    assert len(p1.steps) == 1 and p1.steps[0].kind is StepKind.SKIP

    p2 = plan_skip_concat(2)
    assert [(s.targets, s.contexts) for s in p2.steps] == [((0,), ()), ((1,), (0,))]


@given(st.integers(1, 64))
@settings(max_examples=64, deadline=None)
def test_plan_validity_property(n):
    validate_plan(plan_causal(n), n, WindowConfig(2))
    validate_plan(plan_skip_concat(n), n, WindowConfig(3))


def test_plan_window_bounds():
    for n in (1, 5, 16, 33):
        for step in plan_skip_concat(n).steps:
            assert len(step.targets) + len(step.contexts) <= 3
        for step in plan_causal(n).steps:
            assert len(step.targets) + len(step.contexts) <= 2


def test_plan_period_knob():
    p = plan_skip_concat(7, period=3)
    kinds = chunk_kinds(p)
    assert [kinds[i] for i in (0, 3, 6)] == [StepKind.SKIP] * 3
    validate_plan(p, 7)


def test_validate_plan_rejects_bad_plans():
    bad = GenerationPlan((PlanStep((0,), (1,), StepKind.INITIAL),
                          PlanStep((1,), (), StepKind.SKIP)))
    with pytest.raises(PlanError, match="before"):
        validate_plan(bad, 2)
    dup = GenerationPlan((PlanStep((0,), (), StepKind.SKIP),
                          PlanStep((0,), (), StepKind.SKIP)))
    with pytest.raises(PlanError, match="twice"):
        validate_plan(dup, 1)


def test_simulate_error_examples():
    causal = simulate_error(plan_causal(5), ErrorModel(1.0, 1.0))
    assert causal == [1.0, 2.0, 3.0, 4.0, 5.0]

    skip = simulate_error(plan_skip_concat(5), ErrorModel(1.0, 1.0))
    assert skip == [1.0, 2.0, 1.0, 2.0, 1.0]
    assert max(skip) == 2.0

    flat = simulate_error(plan_causal(6), ErrorModel(1.0, 0.0))
    assert flat == [1.0] * 6


def test_bounded_error_closed_forms():
    for n in (8, 64, 256):
        for alpha in (0.25, 0.5, 1.0):
            m = ErrorModel(1.0, alpha)
            skip_max = max(simulate_error(plan_skip_concat(n), m))
            assert skip_max == 1.0 + alpha  # exact
            causal_max = max(simulate_error(plan_causal(n), m))
            expected = 0.0
            for _ in range(n):
                expected = 1.0 + alpha * expected
            assert causal_max == expected


def test_error_csv(tmp_path):
    path = tmp_path / "err.csv"
    write_error_csv(path, plan_skip_concat(4), ErrorModel(1.0, 0.5))
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "chunk_id,kind,error"
    assert len(lines) == 5
    assert lines[1].startswith("0,skip,1.0")


def test_plan_json_dump():
    plan = plan_skip_concat(3)
    data = json.loads(plan.to_json())
    assert data[0] == {"targets": [0], "contexts": [], "kind": "skip"}
    assert data[2]["contexts"] == [0, 2]


# --- baselines ------------------------------------------------------------------

def test_repeat_previous_baseline():
    frames = np.zeros((2, 2, 2, 1), dtype=np.float32)
    frames[1] = 1.0
    out = repeat_previous_baseline(FrameSequence(frames), 2)
    assert list(out.frames[:, 0, 0, 0]) == [0.0, 0.0, 1.0]


def test_interpolated_frame_psnr_excludes_keyframes(rng):
    gt = FrameSequence(rng.random((5, 4, 4, 3), dtype=np.float32))
    out_frames = gt.frames.copy()
    out_frames[1] = 0.0  # corrupt an interpolated frame only
    score_all = interpolated_frame_psnr(gt, FrameSequence(out_frames), 2)
    out_frames2 = gt.frames.copy()
    out_frames2[2] = 0.0  # corrupt a keyframe only
    score_key = interpolated_frame_psnr(gt, FrameSequence(out_frames2), 2)
    assert score_all < 99.0
    assert score_key == 99.0
    with pytest.raises(ValueError, match="s=1"):
        interpolated_frame_psnr(gt, FrameSequence(gt.frames.copy()), 1)


# --- whole pipeline with tiny models ---------------------------------------------

TINY_VAE = VaeConfig(spatial_stride=2, temporal_stride=1, latent_channels=2,
                     base_width=4, level_count=2)
TINY_DN = DenoiserConfig(model_dim=8, head_count=2, layer_count=1, token_patch=2)


@pytest.fixture(scope="module")
def tiny_models():
    spec = SyntheticSpec(1, "bounce", (1.0, 2.0), (5, 8), "solid")
    corpus = [gen_synthetic(spec, 9, 16, 16, seed=40 + i) for i in range(2)]
    vae, _ = train_vae(corpus, TINY_VAE, seed=0, settings=VaeTrainSettings(
        steps=2, batch_size=1, lr=1e-3, chunk_len=4, s_choices=(2,)))
    vae.eval()
    dn, mean, std, _ = train_denoiser(corpus, vae, TINY_DN, seed=0,
                                      settings=DenoiserTrainSettings(
                                          steps=2, batch_size=1, lr=1e-3, chunk_len=4,
                                          s_choices=(2,), window_choices=(1, 2, 3),
                                          shift_train=2.0, tile=16, stride=16))
    dn.eval()
    return corpus, vae, dn, mean, std


def _infer(corpus, vae, dn, mean, std, **kw):
    from framefill.video_io import downsample_temporal
    lq = downsample_temporal(corpus[0], 2)
    defaults = dict(tile=16, stride=16, chunk_len=4, steps=4, shift=2.0, seed=3)
    defaults.update(kw)
    return lq, run_inference(lq, 2, vae, dn, mean, std, **defaults)


def test_inference_s1_identity(tiny_models):
    corpus, vae, dn, mean, std = tiny_models
    out, report = run_inference(corpus[0], 1, vae, dn, mean, std,
                                tile=16, stride=16, chunk_len=4)
    assert np.array_equal(out.frames, corpus[0].frames)
    assert report["model_invocations"] == 0


def test_inference_shape_and_keyframes(tiny_models):
    corpus, vae, dn, mean, std = tiny_models
    for mode in ("causal", "skip_concat"):
        lq, (out, report) = _infer(corpus, vae, dn, mean, std, mode=mode)
        assert out.shape[0] == 2 * (lq.shape[0] - 1) + 1
        assert np.array_equal(out.frames[::2], lq.frames)  # bit-exact passthrough
        assert report["pad_frames"] == 3  # 9 -> 12 frames
        assert report["frame_count"] == 9


def test_inference_deterministic(tiny_models):
    corpus, vae, dn, mean, std = tiny_models
    _, (a, _) = _infer(corpus, vae, dn, mean, std, mode="skip_concat", seed=11)
    _, (b, _) = _infer(corpus, vae, dn, mean, std, mode="skip_concat", seed=11)
    assert np.array_equal(a.frames, b.frames)
    _, (c, _) = _infer(corpus, vae, dn, mean, std, mode="skip_concat", seed=12)
    assert not np.array_equal(a.frames, c.frames)


def test_inference_decoder_modes_differ_after_training(tiny_models):
    corpus, vae, dn, mean, std = tiny_models
    _, (a, ra) = _infer(corpus, vae, dn, mean, std, decoder="cond")
    _, (b, rb) = _infer(corpus, vae, dn, mean, std, decoder="uncond")
    assert a.shape == b.shape
    assert ra["decoder"] == "cond" and rb["decoder"] == "uncond"


def test_inference_rejects_bad_mode(tiny_models):
    corpus, vae, dn, mean, std = tiny_models
    with pytest.raises(ValueError, match="mode"):
        _infer(corpus, vae, dn, mean, std, mode="zigzag")


def test_inference_window_violation(tiny_models):
    corpus, vae, dn, mean, std = tiny_models
    with pytest.raises(PlanError, match="window"):
        _infer(corpus, vae, dn, mean, std, mode="skip_concat",
               window=WindowConfig(2))
