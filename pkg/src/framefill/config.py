"""Pipeline configuration: one JSON file drives every CLI stage.

All divisibility constraints required by downstream modules are validated at
load time so geometry errors surface before any compute starts.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .video_io import BACKGROUND_KINDS, MOTION_KINDS


class ConfigError(Exception):
    pass


@dataclass
class DataConfig:
    train_clips: int = 32
    eval_clips: int = 6
    frames: int = 33
    height: int = 64
    width: int = 64
    seed: int = 7
    shape_count: int = 3
    motion_kinds: tuple[str, ...] = ("linear", "bounce", "sinusoidal")
    backgrounds: tuple[str, ...] = ("solid", "gradient", "noise-texture")
    speed_range: tuple[float, float] = (1.5, 3.5)
    size_range: tuple[int, int] = (10, 22)


@dataclass
class CodecConfig:
    spatial_stride: int = 4
    temporal_stride: int = 2
    latent_channels: int = 8
    base_width: int = 20
    level_count: int = 3


@dataclass
class TileConfig:
    tile: int = 64
    stride: int = 64


@dataclass
class ChunkConfig:
    len: int = 8


@dataclass
class DenoiserSection:
    model_dim: int = 64
    head_count: int = 4
    layer_count: int = 4
    token_patch: int = 2
    window_radius: int = 1


@dataclass
class TrainingConfig:
    vae_steps: int = 1200
    dit_steps: int = 2500
    batch: int = 2
    lr_vae: float = 1.0e-3
    lr_dit: float = 2.0e-3
    shift_train: float = 4.0
    s_choices: tuple[int, ...] = (2, 4)
    window_choices: tuple[int, ...] = (1, 2, 3)
    checkpoint_every: int = 500
    seed: int = 0


@dataclass
class InferenceConfig:
    steps: int = 16
    shift: float = 8.0
    mode: str = "skip_concat"
    s: int = 2
    seed: int = 0
    max_chunks_per_invocation: int = 3
    skip_period: int = 2
    decoder: str = "cond"


@dataclass
class PipelineConfig:
    data: DataConfig = field(default_factory=DataConfig)
    codec: CodecConfig = field(default_factory=CodecConfig)
    tiles: TileConfig = field(default_factory=TileConfig)
    chunks: ChunkConfig = field(default_factory=ChunkConfig)
    denoiser: DenoiserSection = field(default_factory=DenoiserSection)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


_SECTIONS = {
    "data": DataConfig, "codec": CodecConfig, "tiles": TileConfig,
    "chunks": ChunkConfig, "denoiser": DenoiserSection,
    "training": TrainingConfig, "inference": InferenceConfig,
}


def _build_section(cls, obj: dict, section: str):
    known = {f for f in cls.__dataclass_fields__}
    unknown = set(obj) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    coerced = {}
    for k, v in obj.items():
        if isinstance(v, list):
            v = tuple(v)
        coerced[k] = v
    return cls(**coerced)


def load_config(path: str | Path | None = None) -> PipelineConfig:
    cfg = PipelineConfig()
    if path is not None:
        try:
            obj = json.loads(Path(path).read_text())
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}") from e
        unknown = set(obj) - set(_SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        sections = {}
        for name, cls in _SECTIONS.items():
            sections[name] = _build_section(cls, obj.get(name, {}), name)
        cfg = PipelineConfig(**sections)
    validate_config(cfg)
    return cfg


def validate_config(cfg: PipelineConfig) -> None:
    c, t, ch, d = cfg.codec, cfg.tiles, cfg.chunks, cfg.denoiser
    rs, rt = c.spatial_stride, c.temporal_stride

    if c.spatial_stride != 2 ** (c.level_count - 1):
        raise ConfigError(f"codec.spatial_stride={rs} must equal 2^(level_count-1)"
                          f"={2 ** (c.level_count - 1)}; adjust codec.level_count")
    if t.stride > t.tile:
        raise ConfigError(f"tiles.stride={t.stride} exceeds tiles.tile={t.tile}")
    if t.tile % rs or t.stride % rs:
        raise ConfigError(f"tiles.tile={t.tile} and tiles.stride={t.stride} must be "
                          f"divisible by codec.spatial_stride={rs}")
    if ch.len % rt:
        raise ConfigError(f"chunks.len={ch.len} must be divisible by "
                          f"codec.temporal_stride={rt}")
    if ch.len // rt < 1:
        raise ConfigError("chunks.len too small: no latent frames per chunk")

    h, w = cfg.data.height, cfg.data.width
    if h % rs or w % rs:
        raise ConfigError(f"frame dims {h}x{w} must be divisible by "
                          f"codec.spatial_stride={rs}")
    if h % t.stride or w % t.stride:
        raise ConfigError(f"frame dims {h}x{w} must be multiples of tiles.stride="
                          f"{t.stride} so attention chunks are uniform")

    stride_lat = t.stride // rs
    if stride_lat % d.token_patch:
        raise ConfigError(f"latent stride region {stride_lat} must be divisible by "
                          f"denoiser.token_patch={d.token_patch}")
    if d.model_dim % d.head_count:
        raise ConfigError(f"denoiser.model_dim={d.model_dim} must be divisible by "
                          f"head_count={d.head_count}")

    for s in tuple(cfg.training.s_choices) + (cfg.inference.s,):
        if s < 1:
            raise ConfigError(f"temporal factor s={s} must be >= 1")
        if (cfg.data.frames - 1) % s:
            raise ConfigError(f"data.frames={cfg.data.frames} must satisfy (T-1) "
                              f"divisible by s={s}")
    if cfg.data.frames < ch.len:
        raise ConfigError(f"data.frames={cfg.data.frames} shorter than one chunk "
                          f"({ch.len})")

    if cfg.inference.mode not in ("causal", "skip_concat"):
        raise ConfigError(f"inference.mode={cfg.inference.mode!r} must be 'causal' "
                          f"or 'skip_concat'")
    if cfg.inference.decoder not in ("cond", "uncond"):
        raise ConfigError(f"inference.decoder={cfg.inference.decoder!r} must be "
                          f"'cond' or 'uncond'")
    if cfg.inference.max_chunks_per_invocation < 2:
        raise ConfigError("inference.max_chunks_per_invocation must be >= 2")
    if cfg.inference.skip_period < 2:
        raise ConfigError("inference.skip_period must be >= 2")
    if cfg.inference.steps < 1:
        raise ConfigError("inference.steps must be >= 1")
    if cfg.inference.shift < 1 or cfg.training.shift_train < 1:
        raise ConfigError("timestep shift values must be >= 1")

    for kind in cfg.data.motion_kinds:
        if kind not in MOTION_KINDS:
            raise ConfigError(f"unknown motion kind {kind!r}; choose from {MOTION_KINDS}")
    for bg in cfg.data.backgrounds:
        if bg not in BACKGROUND_KINDS:
            raise ConfigError(f"unknown background {bg!r}; choose from {BACKGROUND_KINDS}")
    lo, hi = cfg.data.speed_range
    if lo < 0 or hi < lo:
        raise ConfigError(f"data.speed_range={cfg.data.speed_range} must be ordered "
                          f"and non-negative")
    slo, shi = cfg.data.size_range
    if slo <= 0 or shi < slo:
        raise ConfigError(f"data.size_range={cfg.data.size_range} must be ordered "
                          f"and positive")
