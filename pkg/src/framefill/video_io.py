"""Video file I/O, synthetic clip generation, and evaluation metrics.

Videos are stored on disk as one binary PPM (P6) file per frame plus a JSON
manifest; grayscale clips use PGM (P5). In memory a video is a
``FrameSequence``: a (T, H, W, C) float32 array with values in [0, 1].
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

PSNR_CAP_DB = 99.0

MOTION_KINDS = ("linear", "sinusoidal", "bounce")
BACKGROUND_KINDS = ("solid", "gradient", "noise-texture")


class VideoIOError(Exception):
    """Raised for malformed manifests, missing frames, or bad geometry."""


@dataclass(frozen=True)
class FrameSequence:
    """A video clip as a (T, H, W, C) float32 array with values in [0, 1]."""

    frames: np.ndarray
    frame_rate_hint: Optional[Fraction] = None

    def __post_init__(self):
        f = self.frames
        if f.ndim != 4:
            raise VideoIOError(f"frames must be (T, H, W, C), got shape {f.shape}")
        t, _, _, c = f.shape
        if t < 1:
            raise VideoIOError("empty video")
        if c not in (1, 3):
            raise VideoIOError(f"channel count must be 1 or 3, got {c}")
        if f.dtype != np.float32:
            object.__setattr__(self, "frames", f.astype(np.float32))
        lo, hi = float(self.frames.min()), float(self.frames.max())
        if lo < 0.0 or hi > 1.0:
            raise VideoIOError(f"frame values outside [0, 1]: min={lo}, max={hi}")

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return tuple(self.frames.shape)  # type: ignore[return-value]


@dataclass(frozen=True)
class VideoManifest:
    width: int
    height: int
    channels: int
    frame_count: int
    frame_files: tuple[str, ...]
    generator_seed: Optional[int] = None

    def __post_init__(self):
        if self.frame_count != len(self.frame_files):
            raise VideoIOError(
                f"frame_count={self.frame_count} but {len(self.frame_files)} frame files listed"
            )

    def to_json(self) -> str:
        return json.dumps(
            {
                "width": self.width,
                "height": self.height,
                "channels": self.channels,
                "frame_count": self.frame_count,
                "frame_files": list(self.frame_files),
                "generator_seed": self.generator_seed,
            },
            indent=2,
        )

    @staticmethod
    def from_json(text: str) -> "VideoManifest":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as e:
            raise VideoIOError(f"malformed manifest: {e}") from e
        missing = {"width", "height", "channels", "frame_count", "frame_files"} - obj.keys()
        if missing:
            raise VideoIOError(f"manifest missing keys: {sorted(missing)}")
        return VideoManifest(
            width=int(obj["width"]),
            height=int(obj["height"]),
            channels=int(obj["channels"]),
            frame_count=int(obj["frame_count"]),
            frame_files=tuple(obj["frame_files"]),
            generator_seed=obj.get("generator_seed"),
        )


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters for procedurally generated moving-shape clips."""

    shape_count: int
    motion_kind: str  # one of MOTION_KINDS
    speed_range: tuple[float, float]  # pixels per frame
    size_range: tuple[int, int]  # shape diameter in pixels
    background: str = "solid"  # one of BACKGROUND_KINDS

    def __post_init__(self):
        if self.motion_kind not in MOTION_KINDS:
            raise ValueError(f"motion_kind must be one of {MOTION_KINDS}, got {self.motion_kind!r}")
        if self.background not in BACKGROUND_KINDS:
            raise ValueError(f"background must be one of {BACKGROUND_KINDS}, got {self.background!r}")
        lo, hi = self.speed_range
        if lo < 0 or hi < lo:
            raise ValueError(f"speed_range must be ordered and non-negative, got {self.speed_range}")
        slo, shi = self.size_range
        if slo <= 0 or shi < slo:
            raise ValueError(f"size_range must be ordered and positive, got {self.size_range}")


# ---------------------------------------------------------------------------
# PPM / PGM frame files
# ---------------------------------------------------------------------------

def _quantize(frames: np.ndarray) -> np.ndarray:
    # Round half up; np.round would round half to even.
    return np.floor(frames.astype(np.float64) * 255.0 + 0.5).astype(np.uint8)


def _write_pnm(path: Path, frame_u8: np.ndarray) -> None:
    h, w, c = frame_u8.shape
    magic = b"P6" if c == 3 else b"P5"
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(frame_u8.tobytes())


def _read_pnm(path: Path) -> np.ndarray:
    """Read a binary PPM/PGM frame as (H, W, C) uint8."""
    try:
        data = path.read_bytes()
    except OSError as e:
        raise VideoIOError(f"missing frame file: {path}") from e

    # Header: magic, width, height, maxval; '#' comments allowed between tokens.
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise VideoIOError(f"truncated PNM header in {path}")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval

    magic = tokens[0]
    if magic not in (b"P6", b"P5"):
        raise VideoIOError(f"unsupported PNM magic {magic!r} in {path}")
    c = 3 if magic == b"P6" else 1
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise VideoIOError(f"only 8-bit PNM supported, got maxval={maxval} in {path}")
    need = h * w * c
    body = data[pos : pos + need]
    if len(body) != need:
        raise VideoIOError(f"frame file {path} has {len(body)} pixel bytes, expected {need}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, c)


def save_video(seq: FrameSequence, out_dir: str | Path, generator_seed: Optional[int] = None) -> VideoManifest:
    """Write one PPM/PGM per frame plus 'manifest.json'; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t, h, w, c = seq.shape
    quantized = _quantize(seq.frames)
    names = []
    ext = "ppm" if c == 3 else "pgm"
    for i in range(t):
        name = f"frame_{i:05d}.{ext}"
        _write_pnm(out / name, quantized[i])
        names.append(name)
    manifest = VideoManifest(
        width=w, height=h, channels=c, frame_count=t,
        frame_files=tuple(names), generator_seed=generator_seed,
    )
    (out / "manifest.json").write_text(manifest.to_json())
    return manifest


def load_video(manifest_path: str | Path) -> FrameSequence:
    """Load the clip described by a manifest; frames normalized to [0, 1]."""
    mpath = Path(manifest_path)
    if mpath.is_dir():
        mpath = mpath / "manifest.json"
    try:
        manifest = VideoManifest.from_json(mpath.read_text())
    except OSError as e:
        raise VideoIOError(f"cannot read manifest {mpath}: {e}") from e
    if manifest.frame_count == 0:
        raise VideoIOError(f"empty video: {mpath} lists no frames")

    frames = np.empty(
        (manifest.frame_count, manifest.height, manifest.width, manifest.channels),
        dtype=np.float32,
    )
    for i, name in enumerate(manifest.frame_files):
        frame = _read_pnm(mpath.parent / name)
        if frame.shape != (manifest.height, manifest.width, manifest.channels):
            raise VideoIOError(
                f"frame {name}: decoded shape {frame.shape} does not match manifest "
                f"({manifest.height}, {manifest.width}, {manifest.channels})"
            )
        frames[i] = frame.astype(np.float32) / 255.0
    return FrameSequence(frames)


# ---------------------------------------------------------------------------
# Synthetic clips
# ---------------------------------------------------------------------------

def _fold(u: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Reflect an unbounded coordinate into [lo, hi] (triangular wave)."""
    if hi <= lo:
        return np.full_like(u, (lo + hi) / 2.0)
    span = hi - lo
    w = np.mod(u - lo, 2.0 * span)
    return lo + np.where(w <= span, w, 2.0 * span - w)


def _make_background(kind: str, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    if kind == "solid":
        color = rng.uniform(0.0, 0.35, size=3)
        return np.broadcast_to(color, (h, w, 3)).astype(np.float64).copy()
    if kind == "gradient":
        a, b = rng.uniform(0.0, 0.4, size=(2, 3))
        theta = rng.uniform(0.0, 2.0 * math.pi)
        yy, xx = np.mgrid[0:h, 0:w]
        ramp = (yy * math.sin(theta) + xx * math.cos(theta)).astype(np.float64)
        ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-9)
        return a + ramp[..., None] * (b - a)
    # noise-texture: coarse random grid, bilinearly upsampled, static in time
    coarse = rng.uniform(0.0, 0.4, size=(5, 5, 3))
    ys = np.linspace(0, 4, h)
    xs = np.linspace(0, 4, w)
    y0 = np.floor(ys).astype(int).clip(0, 3)
    x0 = np.floor(xs).astype(int).clip(0, 3)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    c00 = coarse[y0][:, x0]
    c01 = coarse[y0][:, x0 + 1]
    c10 = coarse[y0 + 1][:, x0]
    c11 = coarse[y0 + 1][:, x0 + 1]
    return (c00 * (1 - fy) * (1 - fx) + c01 * (1 - fy) * fx
            + c10 * fy * (1 - fx) + c11 * fy * fx)


def _shape_positions(kind: str, t: np.ndarray, h: int, w: int, radius: float,
                     speed: float, rng: np.random.Generator,
                     margin: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame (y, x) center of one shape; continuous in t."""
    lo_y, hi_y = radius + margin, h - 1 - radius - margin
    lo_x, hi_x = radius + margin, w - 1 - radius - margin
    theta = rng.uniform(0.0, 2.0 * math.pi)
    vy, vx = speed * math.sin(theta), speed * math.cos(theta)
    y0 = rng.uniform(min(lo_y, hi_y), max(lo_y, hi_y))
    x0 = rng.uniform(min(lo_x, hi_x), max(lo_x, hi_x))

    if kind == "linear":
        return y0 + vy * t, x0 + vx * t
    if kind == "bounce":
        return _fold(y0 + vy * t, lo_y, hi_y), _fold(x0 + vx * t, lo_x, hi_x)
    # sinusoidal: peak per-axis speed equals the drawn velocity component
    period = rng.uniform(8.0, 24.0)
    omega = 2.0 * math.pi / period
    phase_y, phase_x = rng.uniform(0.0, 2.0 * math.pi, size=2)
    amp_y = min(abs(vy) / omega, min(y0 - lo_y, hi_y - y0)) if hi_y > lo_y else 0.0
    amp_x = min(abs(vx) / omega, min(x0 - lo_x, hi_x - x0)) if hi_x > lo_x else 0.0
    y = y0 + amp_y * (np.sin(omega * t + phase_y) - math.sin(phase_y))
    x = x0 + amp_x * (np.sin(omega * t + phase_x) - math.sin(phase_x))
    return y, x


def gen_synthetic(spec: SyntheticSpec, t: int, h: int, w: int, seed: int) -> FrameSequence:
    """Deterministic moving-shape clip; pure function of (spec, t, h, w, seed).

    Shapes are rendered with ~1.5 px anti-aliased edges so their rasterized
    centroid tracks the analytic trajectory with subpixel accuracy.
    """
    if t < 1 or h < 1 or w < 1:
        raise ValueError(f"T, H, W must be >= 1, got ({t}, {h}, {w})")
    rng = np.random.default_rng(seed)
    bg = _make_background(spec.background, h, w, rng)
    frames = np.broadcast_to(bg, (t, h, w, 3)).copy()

    times = np.arange(t, dtype=np.float64)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    edge = 1.5
    for _ in range(spec.shape_count):
        is_disc = rng.uniform() < 0.5
        color = rng.uniform(0.45, 1.0, size=3)
        diameter = rng.uniform(spec.size_range[0], spec.size_range[1])
        radius = diameter / 2.0
        speed = rng.uniform(spec.speed_range[0], spec.speed_range[1])
        # bounce keeps the soft edge fully inside the frame
        margin = edge if spec.motion_kind == "bounce" else 0.0
        cy, cx = _shape_positions(spec.motion_kind, times, h, w, radius, speed, rng,
                                  margin=margin)
        for k in range(t):
            if is_disc:
                d = np.sqrt((yy - cy[k]) ** 2 + (xx - cx[k]) ** 2)
                m = np.clip((radius - d) / edge + 1.0, 0.0, 1.0)
            else:
                my = np.clip((radius - np.abs(yy - cy[k])) / edge + 1.0, 0.0, 1.0)
                mx = np.clip((radius - np.abs(xx - cx[k])) / edge + 1.0, 0.0, 1.0)
                m = my * mx
            frames[k] = frames[k] * (1.0 - m[..., None]) + color * m[..., None]

    return FrameSequence(np.clip(frames, 0.0, 1.0).astype(np.float32))


# ---------------------------------------------------------------------------
# Temporal sampling and metrics
# ---------------------------------------------------------------------------

def downsample_temporal(seq: FrameSequence, s: int) -> FrameSequence:
    """Keep frames at indices {0, s, 2s, ...}; requires (T-1) divisible by s."""
    if s < 1:
        raise ValueError(f"downsampling factor must be >= 1, got {s}")
    t = seq.shape[0]
    if (t - 1) % s != 0:
        raise ValueError(f"(T-1)={t - 1} not divisible by s={s}")
    return FrameSequence(seq.frames[::s].copy(), seq.frame_rate_hint)


def mse(a: FrameSequence | np.ndarray, b: FrameSequence | np.ndarray) -> float:
    fa = a.frames if isinstance(a, FrameSequence) else a
    fb = b.frames if isinstance(b, FrameSequence) else b
    if fa.shape != fb.shape:
        raise ValueError(f"shape mismatch: {fa.shape} vs {fb.shape}")
    diff = fa.astype(np.float64) - fb.astype(np.float64)
    return float(np.mean(diff * diff))


def psnr(a: FrameSequence | np.ndarray, b: FrameSequence | np.ndarray) -> float:
    """PSNR in dB against peak 1.0, capped at 99 dB for identical inputs."""
    err = mse(a, b)
    if err == 0.0:
        return PSNR_CAP_DB
    return min(-10.0 * math.log10(err), PSNR_CAP_DB)


def flicker(seq: FrameSequence | np.ndarray) -> float:
    """Mean squared second temporal difference; 0 for any linear-in-t fade."""
    frames = seq.frames if isinstance(seq, FrameSequence) else seq
    if frames.shape[0] < 3:
        raise ValueError(f"flicker needs T >= 3, got T={frames.shape[0]}")
    f = frames.astype(np.float64)
    second = f[2:] - 2.0 * f[1:-1] + f[:-2]
    return float(np.mean(second * second))
