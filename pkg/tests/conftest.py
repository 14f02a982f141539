"""Shared fixtures and hypothesis tuning for the test suite."""

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from evofarm.network import LayerSpec, NetworkSpec
from evofarm.rng import keyed_generator

# Property tests run on shared CI boxes; wall-clock deadlines only add noise.
settings.register_profile(
    "default",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def palette():
    from evofarm.preproc import default_palette

    return default_palette()


@pytest.fixture(scope="session")
def tiny_spec():
    """Smallest useful network: one dense layer, 8 weights, 2 outputs."""
    return NetworkSpec(
        layers=(LayerSpec("dense", (2, 2, 1), (2, 2), 1, 2, relu=False),)
    )


def random_frames(seed: int, count: int) -> np.ndarray:
    """Uniform random palette-index frames (210x160, values 0..127)."""
    gen = keyed_generator(seed, "test-frames")
    return gen.integers(0, 128, size=(count, 210, 160), dtype=np.uint8)
