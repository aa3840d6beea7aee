import numpy as np
import pytest
import torch

from framefill.runtime import configure_torch
from framefill.video_io import FrameSequence, SyntheticSpec, gen_synthetic

configure_torch()


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240811)


@pytest.fixture()
def small_clip() -> FrameSequence:
    spec = SyntheticSpec(shape_count=2, motion_kind="bounce", speed_range=(1.0, 2.0),
                         size_range=(6, 10), background="gradient")
    return gen_synthetic(spec, 9, 32, 32, seed=3)


def tiny_frames(rng, t=4, h=8, w=8, c=3) -> FrameSequence:
    return FrameSequence(rng.random((t, h, w, c), dtype=np.float32))
