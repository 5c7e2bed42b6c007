import numpy as np
import pytest
from hypothesis import settings

from aerowatch.video import SynthScene, VideoMeta, render_scene

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def small_scene(kind="flat", seed=1, frames=200, on=((60, 200),), layout_seed=7):
    """Cheap 256x320 clip with a 32 px machine; off first, then on."""
    return SynthScene(VideoMeta(320, 256, 25, frames), (150, 110, 32, 32), list(on), kind,
                      seed=seed, layout_seed=layout_seed)


@pytest.fixture(scope="session")
def scene_frames():
    scene = small_scene()
    return scene, [f.pixels for f in render_scene(scene)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
