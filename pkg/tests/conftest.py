import numpy as np
import pytest

from fcse.audio_io import AudioClip


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def white_clip(rng):
    return AudioClip(0.3 * rng.standard_normal(16000).clip(-3, 3) / 3, 16000)
