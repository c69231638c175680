import numpy as np
import pytest

from tempotrack import TrackerConfig, init_model
from tempotrack.synth import generate


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_config():
    return TrackerConfig.tiny()


@pytest.fixture(scope="session")
def tiny_params(tiny_config):
    # nonzero calibration so the adaptive path is actually exercised
    return init_model(tiny_config, seed=7, calibration_scale=0.05)


@pytest.fixture(scope="session")
def short_sequence():
    return generate(11, 12, (96, 96))


def randn(rng, *shape, scale=1.0):
    return (rng.standard_normal(shape) * scale).astype(np.float32)
