"""Command-line lifecycle: data generation, training, inference, ablations.

Every subcommand is driven by one JSON config file and a seed, and all
artifacts (frames, checkpoints, traces, reports) are deterministic given
both. Exit codes: 0 success, 1 usage or config error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, PipelineConfig, load_config
from .scheduler import (ErrorModel, interpolated_frame_psnr, plan_causal,
                        plan_skip_concat, repeat_previous_baseline, run_inference,
                        write_error_csv, WindowConfig)
from .conditioning import nn_upsample, zero_pad_upsample, upsampled_length
from .denoiser import DenoiserConfig
from .tiling import plan_chunks, plan_tiles, tiled_decode, tiled_encode
from .training import (DenoiserTrainSettings, VaeTrainSettings, load_corpus,
                       load_denoiser, load_vae, pad_frames, train_denoiser, train_vae)
from .vae import ToyVaeCodec, VaeConfig
from .video_io import (FrameSequence, SyntheticSpec, downsample_temporal, flicker,
                       gen_synthetic, load_video, psnr, save_video)


def _vae_config(cfg: PipelineConfig) -> VaeConfig:
    c = cfg.codec
    return VaeConfig(spatial_stride=c.spatial_stride, temporal_stride=c.temporal_stride,
                     latent_channels=c.latent_channels, base_width=c.base_width,
                     level_count=c.level_count)


def _denoiser_config(cfg: PipelineConfig) -> DenoiserConfig:
    d = cfg.denoiser
    return DenoiserConfig(model_dim=d.model_dim, head_count=d.head_count,
                          layer_count=d.layer_count, token_patch=d.token_patch)


def cmd_gen_data(cfg: PipelineConfig, out_dir: Path) -> int:
    data = cfg.data
    if data.train_clips == 0 and data.eval_clips == 0:
        out_dir.mkdir(parents=True, exist_ok=True)
        print("warning: corpus is empty (0 clips requested)", file=sys.stderr)
        return 0
    for split, count, seed_base in (("train", data.train_clips, data.seed),
                                    ("eval", data.eval_clips, data.seed + 10_000)):
        split_dir = out_dir / split
        split_dir.mkdir(parents=True, exist_ok=True)
        if count == 0:
            print(f"warning: {split} corpus is empty", file=sys.stderr)
        for i in range(count):
            spec = SyntheticSpec(
                shape_count=data.shape_count,
                motion_kind=data.motion_kinds[i % len(data.motion_kinds)],
                speed_range=tuple(data.speed_range),
                size_range=tuple(data.size_range),
                background=data.backgrounds[i % len(data.backgrounds)],
            )
            seed = seed_base + i
            clip = gen_synthetic(spec, data.frames, data.height, data.width, seed)
            save_video(clip, split_dir / f"clip_{i:03d}", generator_seed=seed)
        print(f"wrote {count} {split} clips to {split_dir}")
    return 0


def cmd_train_vae(cfg: PipelineConfig, corpus_dir: Path, out_base: Path,
                  resume: Path | None) -> int:
    corpus = load_corpus(corpus_dir)
    settings = VaeTrainSettings(
        steps=cfg.training.vae_steps, batch_size=cfg.training.batch,
        lr=cfg.training.lr_vae, chunk_len=cfg.chunks.len,
        s_choices=tuple(cfg.training.s_choices),
        checkpoint_every=cfg.training.checkpoint_every,
        trace_path=out_base.parent / (out_base.name + "_trace.csv"),
        checkpoint_path=out_base,
    )
    _, rows = train_vae(corpus, _vae_config(cfg), cfg.training.seed, settings,
                        resume_from=resume)
    if rows:
        print(f"trained codec for {len(rows)} steps; final l1={rows[-1][1]:.5f}")
    else:
        print("steps=0: checkpoint equals initialization")
    print(f"checkpoint: {out_base}.json / {out_base}.bin")
    return 0


def cmd_train_dit(cfg: PipelineConfig, corpus_dir: Path, vae_base: Path,
                  out_base: Path, resume: Path | None) -> int:
    corpus = load_corpus(corpus_dir)
    vae = load_vae(vae_base)
    settings = DenoiserTrainSettings(
        steps=cfg.training.dit_steps, batch_size=cfg.training.batch,
        lr=cfg.training.lr_dit, chunk_len=cfg.chunks.len,
        s_choices=tuple(cfg.training.s_choices),
        window_choices=tuple(cfg.training.window_choices),
        shift_train=cfg.training.shift_train,
        tile=cfg.tiles.tile, stride=cfg.tiles.stride,
        window_radius=cfg.denoiser.window_radius,
        checkpoint_every=cfg.training.checkpoint_every,
        trace_path=out_base.parent / (out_base.name + "_trace.csv"),
        checkpoint_path=out_base,
    )
    _, _, _, rows = train_denoiser(corpus, vae, _denoiser_config(cfg),
                                   cfg.training.seed, settings, resume_from=resume)
    if rows:
        print(f"trained denoiser for {len(rows)} steps; final loss={rows[-1][1]:.5f}")
    else:
        print("steps=0: checkpoint equals initialization")
    print(f"checkpoint: {out_base}.json / {out_base}.bin")
    return 0


def cmd_interpolate(cfg: PipelineConfig, lq_manifest: Path, vae_base: Path,
                    dit_base: Path, out_dir: Path, gt_manifest: Path | None,
                    mode: str | None, seed: int | None) -> int:
    vae = load_vae(vae_base)
    denoiser, lat_mean, lat_std = load_denoiser(dit_base)
    lq = load_video(lq_manifest)
    inf = cfg.inference
    out, report = run_inference(
        lq, inf.s, vae, denoiser, lat_mean, lat_std,
        tile=cfg.tiles.tile, stride=cfg.tiles.stride, chunk_len=cfg.chunks.len,
        mode=mode or inf.mode, steps=inf.steps, shift=inf.shift,
        seed=seed if seed is not None else inf.seed, skip_period=inf.skip_period,
        window=WindowConfig(inf.max_chunks_per_invocation), decoder=inf.decoder)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_video(out, out_dir)
    if gt_manifest is not None:
        gt = load_video(gt_manifest)
        report["per_frame_psnr"] = [psnr(gt.frames[i], out.frames[i])
                                    for i in range(out.shape[0])]
        report["interpolated_psnr"] = interpolated_frame_psnr(gt, out, inf.s)
    (out_dir / "report.json").write_text(json.dumps(report, indent=2))
    print(f"wrote {report['frame_count']} frames to {out_dir} "
          f"(mode={report['mode']}, seed={report['seed']})")
    return 0


def cmd_ablate(cfg: PipelineConfig, eval_dir: Path, vae_base: Path, dit_base: Path,
               out_csv: Path) -> int:
    vae = load_vae(vae_base)
    denoiser, lat_mean, lat_std = load_denoiser(dit_base)
    clips = load_corpus(eval_dir)
    inf = cfg.inference
    s = inf.s

    arms = [("causal/uncond", "causal", "uncond"),
            ("skip_concat/uncond", "skip_concat", "uncond"),
            ("skip_concat/cond", "skip_concat", "cond")]
    rows = []
    for name, mode, decoder in arms:
        psnrs, flickers = [], []
        for clip in clips:
            lq = downsample_temporal(clip, s)
            out, _ = run_inference(
                lq, s, vae, denoiser, lat_mean, lat_std,
                tile=cfg.tiles.tile, stride=cfg.tiles.stride, chunk_len=cfg.chunks.len,
                mode=mode, steps=inf.steps, shift=inf.shift, seed=inf.seed,
                skip_period=inf.skip_period,
                window=WindowConfig(inf.max_chunks_per_invocation), decoder=decoder)
            psnrs.append(interpolated_frame_psnr(clip, out, s))
            flickers.append(flicker(out))
        rows.append((name, float(np.mean(psnrs)), float(np.mean(flickers))))

    codec = ToyVaeCodec(vae)
    for name, upsampler in (("zero-pad", zero_pad_upsample), ("nearest", nn_upsample)):
        psnrs = []
        for clip in clips:
            lq = downsample_temporal(clip, s)
            up = upsampler(lq, s).frames
            up_pad, _ = pad_frames(up, cfg.chunks.len)
            tiles = plan_tiles(clip.shape[1], clip.shape[2], cfg.tiles.tile, cfg.tiles.stride)
            chunks = plan_chunks(up_pad.shape[0], cfg.chunks.len)
            grid = tiled_encode(up_pad, codec, tiles, chunks)
            recon = tiled_decode(grid, codec, tiles, chunks)[: up.shape[0]]
            key_idx = np.arange(0, up.shape[0], s)
            psnrs.append(psnr(recon[key_idx], lq.frames))
        rows.append((f"conditioning/{name}", float(np.mean(psnrs)), ""))

    out_csv.parent.mkdir(parents=True, exist_ok=True)
    with open(out_csv, "w") as fh:
        fh.write("row,psnr_db,flicker\n")
        for name, p, f in rows:
            fh.write(f"{name},{p},{f}\n")
    for name, p, f in rows:
        print(f"{name}: psnr={p}" + (f" flicker={f}" if f != "" else ""))
    return 0


def cmd_plan(mode: str, n_chunks: int, epsilon: float, alpha: float,
             out_json: Path | None, out_csv: Path | None, period: int) -> int:
    plan = plan_causal(n_chunks) if mode == "causal" else plan_skip_concat(n_chunks, period)
    if out_json is not None:
        out_json.write_text(plan.to_json())
        print(f"wrote plan to {out_json}")
    if out_csv is not None:
        write_error_csv(out_csv, plan, ErrorModel(epsilon, alpha))
        print(f"wrote error simulation to {out_csv}")
    if out_json is None and out_csv is None:
        print(plan.to_json())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="framefill",
                                description="Chunked autoregressive video frame interpolation")
    p.add_argument("--config", type=Path, default=None, help="JSON pipeline config")
    p.add_argument("--threads", type=int, default=None, help="cap worker threads")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("gen-data", help="generate the synthetic corpus")
    sp.add_argument("--out", type=Path, required=True)

    sp = sub.add_parser("train-vae", help="train the frame codec")
    sp.add_argument("--corpus", type=Path, required=True)
    sp.add_argument("--out", type=Path, required=True, help="checkpoint base path")
    sp.add_argument("--resume", type=Path, default=None)

    sp = sub.add_parser("train-dit", help="train the denoiser")
    sp.add_argument("--corpus", type=Path, required=True)
    sp.add_argument("--vae", type=Path, required=True, help="codec checkpoint base")
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--resume", type=Path, default=None)

    sp = sub.add_parser("interpolate", help="run the full pipeline on one clip")
    sp.add_argument("--lq", type=Path, required=True, help="low-frame-rate manifest")
    sp.add_argument("--vae", type=Path, required=True)
    sp.add_argument("--dit", type=Path, required=True)
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--gt", type=Path, default=None, help="ground truth for PSNR report")
    sp.add_argument("--mode", choices=("causal", "skip_concat"), default=None)
    sp.add_argument("--seed", type=int, default=None)

    sp = sub.add_parser("ablate", help="sampling-order and conditioning ablations")
    sp.add_argument("--eval-corpus", type=Path, required=True)
    sp.add_argument("--vae", type=Path, required=True)
    sp.add_argument("--dit", type=Path, required=True)
    sp.add_argument("--out", type=Path, required=True, help="output CSV")

    sp = sub.add_parser("plan", help="dump a generation plan and error simulation")
    sp.add_argument("--mode", choices=("causal", "skip_concat"), required=True)
    sp.add_argument("--chunks", type=int, required=True)
    sp.add_argument("--epsilon", type=float, default=1.0)
    sp.add_argument("--alpha", type=float, default=1.0)
    sp.add_argument("--period", type=int, default=2)
    sp.add_argument("--out-json", type=Path, default=None)
    sp.add_argument("--out-csv", type=Path, default=None)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 1

    from .runtime import configure_torch
    configure_torch(threads=args.threads)

    try:
        if args.command == "plan":
            return cmd_plan(args.mode, args.chunks, args.epsilon, args.alpha,
                            args.out_json, args.out_csv, args.period)
        cfg = load_config(args.config)
        if args.command == "gen-data":
            return cmd_gen_data(cfg, args.out)
        if args.command == "train-vae":
            return cmd_train_vae(cfg, args.corpus, args.out, args.resume)
        if args.command == "train-dit":
            return cmd_train_dit(cfg, args.corpus, args.vae, args.out, args.resume)
        if args.command == "interpolate":
            return cmd_interpolate(cfg, args.lq, args.vae, args.dit, args.out,
                                   args.gt, args.mode, args.seed)
        if args.command == "ablate":
            return cmd_ablate(cfg, args.eval_corpus, args.vae, args.dit, args.out)
        parser.error(f"unknown command {args.command}")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
