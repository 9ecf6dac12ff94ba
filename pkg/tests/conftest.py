import numpy as np
import pytest

from wavebridge import toydata
from wavebridge.dsp import Waveform


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_clips():
    """Small shared synthetic corpus at 8 kHz (full band by construction)."""
    return toydata.make_corpus(6, toydata.ToyConfig(), np.random.default_rng(42))


@pytest.fixture
def noise_wav(rng):
    return Waveform(rng.standard_normal(8192) * 0.2, 8000)
