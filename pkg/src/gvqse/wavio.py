"""16-bit PCM mono WAV reading and writing (stdlib ``wave``)."""

from __future__ import annotations

import wave
from pathlib import Path

import numpy as np

from .dsp import AudioBuffer
from .errors import InvalidInputError

_FULL_SCALE = 32768.0


def read_wav(path: str | Path) -> AudioBuffer:
    """Read a mono 16-bit PCM file into float64 samples in [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as wf:
            channels, width, rate, n = wf.getnchannels(), wf.getsampwidth(), wf.getframerate(), wf.getnframes()
            raw = wf.readframes(n)
    except wave.Error as exc:
        raise InvalidInputError(f"{path}: not a readable RIFF/WAVE file ({exc})") from exc
    except EOFError as exc:
        raise InvalidInputError(f"{path}: truncated WAV file") from exc
    if channels != 1:
        raise InvalidInputError(f"{path}: expected mono audio, got {channels} channels")
    if width != 2:
        raise InvalidInputError(f"{path}: expected 16-bit PCM, got {8 * width}-bit samples")
    pcm = np.frombuffer(raw, dtype="<i2")
    return AudioBuffer(pcm.astype(np.float64) / _FULL_SCALE, rate)


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    """Round to the nearest 16-bit code, clipping to the representable range."""
    return np.clip(np.round(np.asarray(samples) * _FULL_SCALE), -32768, 32767).astype("<i2")


def write_wav(path: str | Path, audio: AudioBuffer) -> None:
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(audio.sample_rate)
        wf.writeframes(to_pcm16(audio.samples).tobytes())
