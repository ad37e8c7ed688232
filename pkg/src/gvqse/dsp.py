"""Signal-processing primitives: MDCT/IMDCT, STFT analysis and resampling.

Everything here works in float64 and is a pure function of its inputs.

MDCT framing is circular: a signal of ``L`` samples (zero-padded at the end
to a multiple of the hop ``W``) is split into ``L / W`` blocks and frame ``k``
covers blocks ``k - 1`` and ``k`` (indices modulo the block count). Every
sample is therefore covered by exactly two sine-windowed frames, the
transform is an orthogonal ``L x L`` map, and a 1 s signal at 16 kHz with
``W = 40`` gives exactly 400 frames.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import signal as sps

from .errors import InvalidInputError

DEFAULT_HALF_WINDOW = 40
STFT_FRAME_LENGTH = 320
STFT_FRAME_SHIFT = 40
STFT_FFT_SIZE = 1024


@dataclass(frozen=True)
class AudioBuffer:
    """Mono waveform in float64 with its sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise InvalidInputError(f"audio must be mono (1-D), got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("audio contains non-finite samples")
        if int(self.sample_rate) <= 0 or int(self.sample_rate) != self.sample_rate:
            raise InvalidInputError(f"sample_rate must be a positive integer, got {self.sample_rate}")
        x = x.copy()
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class MdctSpectrum:
    coefficients: np.ndarray  # frames x W
    hop: int
    n_samples: int
    sample_rate: int
    window_id: str = "sine"

    @property
    def n_frames(self) -> int:
        return self.coefficients.shape[0]


@dataclass(frozen=True)
class StftFrames:
    amplitude: np.ndarray  # frames x (fft_size // 2 + 1)
    phase: np.ndarray
    frame_length: int
    frame_shift: int
    fft_size: int
    sample_rate: int = field(default=16000)


def sine_window(half_window: int) -> np.ndarray:
    n = np.arange(2 * half_window)
    return np.sin(np.pi * (n + 0.5) / (2 * half_window))


@lru_cache(maxsize=16)
def _mdct_basis(half_window: int) -> np.ndarray:
    """Windowed, orthonormally scaled MDCT basis of shape (2W, W)."""
    w = half_window
    n = np.arange(2 * w)[:, None]
    k = np.arange(w)[None, :]
    basis = np.sqrt(2.0 / w) * np.cos(np.pi / w * (n + 0.5 + w / 2) * (k + 0.5))
    basis = sine_window(w)[:, None] * basis
    basis.setflags(write=False)
    return basis


def mdct_forward(audio: AudioBuffer, half_window: int = DEFAULT_HALF_WINDOW) -> MdctSpectrum:
    """Circular MDCT with a sine window; returns ``ceil(len / W)`` frames of ``W`` bins."""
    w = int(half_window)
    if w < 2:
        raise InvalidInputError(f"half_window must be >= 2, got {half_window}")
    x = audio.samples
    if x.shape[0] < 2 * w:
        raise InvalidInputError(f"audio of {x.shape[0]} samples is shorter than 2W = {2 * w}")
    n_frames = -(-x.shape[0] // w)
    blocks = np.zeros(n_frames * w)
    blocks[: x.shape[0]] = x
    blocks = blocks.reshape(n_frames, w)
    # frame k = [block k-1, block k]
    frames = np.concatenate([np.roll(blocks, 1, axis=0), blocks], axis=1)
    coeffs = frames @ _mdct_basis(w)
    return MdctSpectrum(coeffs, w, x.shape[0], audio.sample_rate)


def mdct_inverse(spectrum: MdctSpectrum) -> AudioBuffer:
    coeffs = np.asarray(spectrum.coefficients, dtype=np.float64)
    w = int(spectrum.hop)
    if coeffs.ndim != 2 or coeffs.shape[1] != w or w < 2 or coeffs.shape[0] < 2:
        raise InvalidInputError(f"malformed MDCT spectrum: shape {coeffs.shape}, hop {w}")
    if not np.all(np.isfinite(coeffs)):
        raise InvalidInputError("MDCT spectrum contains non-finite coefficients")
    n_frames = coeffs.shape[0]
    if not 0 < spectrum.n_samples <= n_frames * w:
        raise InvalidInputError(f"n_samples {spectrum.n_samples} inconsistent with {n_frames} frames")
    frames = coeffs @ _mdct_basis(w).T
    # first half of frame k lands on block k-1, second half on block k
    blocks = np.roll(frames[:, :w], -1, axis=0) + frames[:, w:]
    return AudioBuffer(blocks.reshape(-1)[: spectrum.n_samples], spectrum.sample_rate)


@lru_cache(maxsize=8)
def _hann(frame_length: int) -> np.ndarray:
    win = sps.get_window("hann", frame_length, fftbins=True)
    win.setflags(write=False)
    return win


def stft_frame_count(n_samples: int, frame_length: int, frame_shift: int) -> int:
    padded = n_samples + 2 * (frame_length // 2)
    return (padded - frame_length) // frame_shift + 1


def stft_amp_phase(
    audio: AudioBuffer,
    frame_length: int = STFT_FRAME_LENGTH,
    frame_shift: int = STFT_FRAME_SHIFT,
    fft_size: int = STFT_FFT_SIZE,
    frame_range: tuple[int, int] | None = None,
) -> StftFrames:
    """Amplitude and phase spectra with a periodic Hann window and reflective padding.

    Phase lies in (-pi, pi]; bins with zero amplitude get phase 0.
    ``frame_range = (start, stop)`` restricts the computation to those frames.
    """
    if frame_length <= 0 or frame_shift <= 0 or fft_size <= 0:
        raise InvalidInputError("STFT sizes must be positive")
    if fft_size < frame_length:
        raise InvalidInputError(f"fft_size {fft_size} < frame_length {frame_length}")
    if frame_shift > frame_length:
        raise InvalidInputError(f"frame_shift {frame_shift} > frame_length {frame_length}")
    x = audio.samples
    if x.shape[0] < frame_length:
        raise InvalidInputError(f"audio of {x.shape[0]} samples shorter than frame_length {frame_length}")
    pad = frame_length // 2
    padded = np.pad(x, pad, mode="reflect")
    frames = np.lib.stride_tricks.sliding_window_view(padded, frame_length)[::frame_shift]
    if frame_range is not None:
        frames = frames[frame_range[0] : frame_range[1]]
    spec = np.fft.rfft(frames * _hann(frame_length), n=fft_size, axis=1)
    amplitude = np.abs(spec)
    phase = np.angle(spec)
    phase[phase <= -np.pi] = np.pi
    phase[amplitude == 0.0] = 0.0
    return StftFrames(amplitude, phase, frame_length, frame_shift, fft_size, audio.sample_rate)


@lru_cache(maxsize=16)
def _antialias_filter(up: int, down: int, source_rate: int, target_rate: int) -> np.ndarray:
    """Kaiser low-pass at the upsampled rate: 60 dB down from min(rates)/2, passband to 90% of it."""
    fs_hi = source_rate * up
    f_stop = min(source_rate, target_rate) / 2.0
    f_pass = 0.9 * f_stop
    numtaps, beta = sps.kaiserord(60.0, (f_stop - f_pass) / (fs_hi / 2.0))
    numtaps |= 1
    h = sps.firwin(numtaps, (f_pass + f_stop) / 2.0, window=("kaiser", beta), fs=fs_hi)
    h.setflags(write=False)
    return h


def resample(audio: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Polyphase windowed-sinc resampling to ``target_rate``.

    The output has ``round(len * target / source)`` samples. Same-rate calls
    return the input samples unchanged.
    """
    if target_rate is None or target_rate <= 0 or int(target_rate) != target_rate:
        raise InvalidInputError(f"target_rate must be a positive integer, got {target_rate}")
    target_rate = int(target_rate)
    source_rate = audio.sample_rate
    if target_rate == source_rate:
        return AudioBuffer(audio.samples, source_rate)
    g = math.gcd(source_rate, target_rate)
    up, down = target_rate // g, source_rate // g
    h = _antialias_filter(up, down, source_rate, target_rate)
    y = sps.resample_poly(audio.samples, up, down, window=np.array(h))
    n_out = int(round(len(audio) * target_rate / source_rate))
    if y.shape[0] >= n_out:
        y = y[:n_out]
    else:
        y = np.pad(y, (0, n_out - y.shape[0]))
    return AudioBuffer(y, target_rate)
