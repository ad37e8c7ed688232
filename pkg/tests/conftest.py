import numpy as np
import pytest

from gvqse.codec import Codec, fit_linear_codec, train_codebooks_gvq, train_codebooks_rvq, encode
from gvqse.degrade import speech_like
from gvqse.dsp import AudioBuffer

FS = 16000


def speech(seed: int, seconds: float = 1.0) -> AudioBuffer:
    return AudioBuffer(speech_like(np.random.default_rng(seed), seconds, FS), FS)


def noise(seed: int, seconds: float = 1.0, scale: float = 0.1) -> AudioBuffer:
    return AudioBuffer(scale * np.random.default_rng(seed).standard_normal(int(seconds * FS)), FS)


@pytest.fixture(scope="session")
def speech_corpus():
    """Twelve 1 s speech-like clips (12 s in total)."""
    return [speech(100 + i) for i in range(12)]


@pytest.fixture(scope="session")
def linear_model(speech_corpus):
    return fit_linear_codec(speech_corpus, latent_dim=32)


@pytest.fixture(scope="session")
def latents(speech_corpus, linear_model):
    return np.concatenate([encode(a, linear_model) for a in speech_corpus])


@pytest.fixture(scope="session")
def small_codec(linear_model, latents):
    """Group-VQ codec with N = 4, M = 16."""
    return Codec(linear_model, train_codebooks_gvq(latents, 4, 16, seed=1, iterations=20))


@pytest.fixture(scope="session")
def small_rvq_codec(linear_model, latents):
    return Codec(linear_model, train_codebooks_rvq(latents, 4, 16, seed=1, iterations=20))
