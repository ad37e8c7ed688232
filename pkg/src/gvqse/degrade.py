"""Degradation simulation for building (degraded, clean) pairs.

Stages are additive noise at a target SNR, RIR convolution and band-limiting.
A :class:`DegradationSpec` applies them in the listed order; the mixed
recipe is reverb, then noise, then band-limiting.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Mapping, Union

import numpy as np
from scipy import signal as sps

from .dsp import AudioBuffer, resample
from .errors import AssetLookupError, DegenerateInputError, InvalidInputError

TRAIN_SNR_GRID_DB = (0.0, 5.0, 10.0, 15.0)
TEST_SNR_GRID_DB = (2.5, 7.5, 12.5, 17.5)


@dataclass(frozen=True)
class Rir:
    taps: np.ndarray
    sample_rate: int

    def __post_init__(self):
        h = np.array(self.taps, dtype=np.float64)
        if h.ndim != 1 or h.size == 0:
            raise InvalidInputError("RIR must be a non-empty 1-D array")
        if not np.all(np.isfinite(h)):
            raise InvalidInputError("RIR has non-finite taps")
        if np.max(np.abs(h)) <= 0.0:
            raise InvalidInputError("RIR is all zeros")
        h.setflags(write=False)
        object.__setattr__(self, "taps", h)


@dataclass(frozen=True)
class NoiseStage:
    source_id: str
    snr_db: float

    def __post_init__(self):
        if not np.isfinite(self.snr_db):
            raise InvalidInputError(f"snr_db must be finite, got {self.snr_db}")

    def __str__(self) -> str:
        return f"noise({self.source_id},{self.snr_db:g})"


@dataclass(frozen=True)
class ReverbStage:
    rir_id: str

    def __str__(self) -> str:
        return f"reverb({self.rir_id})"


@dataclass(frozen=True)
class BandlimitStage:
    target_hz: int

    def __str__(self) -> str:
        return f"bandlimit({self.target_hz})"


Stage = Union[NoiseStage, ReverbStage, BandlimitStage]
_STAGE_RE = re.compile(r"^(noise|reverb|bandlimit)\(([^)]*)\)$")


@dataclass(frozen=True)
class DegradationSpec:
    stages: tuple[Stage, ...] = ()
    seed: int = 0

    def __str__(self) -> str:
        return ">".join(str(s) for s in self.stages) or "clean"

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "DegradationSpec":
        """Parse ``"reverb(rir0)>noise(white,7.5)>bandlimit(8000)"``; ``"clean"`` is the empty spec."""
        text = text.strip()
        if text in ("", "clean"):
            return cls((), seed)
        stages: list[Stage] = []
        for part in text.split(">"):
            m = _STAGE_RE.match(part.strip())
            if not m:
                raise InvalidInputError(f"cannot parse degradation stage {part!r}")
            kind, args = m.group(1), [a.strip() for a in m.group(2).split(",")]
            try:
                if kind == "noise":
                    stages.append(NoiseStage(args[0], float(args[1])))
                elif kind == "reverb":
                    stages.append(ReverbStage(args[0]))
                else:
                    stages.append(BandlimitStage(int(args[0])))
            except (IndexError, ValueError) as exc:
                raise InvalidInputError(f"bad arguments in stage {part!r}") from exc
        return cls(tuple(stages), seed)


@dataclass
class Assets:
    noises: dict[str, AudioBuffer] = field(default_factory=dict)
    rirs: dict[str, Rir] = field(default_factory=dict)
    clean: list[AudioBuffer] = field(default_factory=list)


def _power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x)))


def _noise_segment(noise: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    if noise.shape[0] >= n:
        start = int(rng.integers(0, noise.shape[0] - n + 1))
        return noise[start : start + n]
    offset = int(rng.integers(0, noise.shape[0]))
    reps = -(-(n + offset) // noise.shape[0])
    return np.tile(noise, reps)[offset : offset + n]


def add_noise(clean: AudioBuffer, noise: AudioBuffer, snr_db: float, seed: int | np.random.Generator = 0) -> AudioBuffer:
    """Mix ``noise`` into ``clean`` at exactly ``snr_db`` over the mixed segment.

    A random (seeded) excerpt of the noise is used; shorter noise is tiled.
    """
    if clean.sample_rate != noise.sample_rate:
        raise InvalidInputError(f"rate mismatch: clean {clean.sample_rate} Hz, noise {noise.sample_rate} Hz")
    if not np.isfinite(snr_db):
        raise InvalidInputError("snr_db must be finite")
    if len(noise) == 0:
        raise DegenerateInputError("noise is empty")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    segment = _noise_segment(noise.samples, len(clean), rng)
    p_clean, p_noise = _power(clean.samples), _power(segment)
    if p_clean == 0.0:
        raise DegenerateInputError("clean signal has zero power")
    if p_noise == 0.0:
        raise DegenerateInputError("noise segment has zero power")
    gain = np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    return AudioBuffer(clean.samples + gain * segment, clean.sample_rate)


def convolve_rir(clean: AudioBuffer, rir: Rir, normalize: bool = True) -> AudioBuffer:
    """Linear convolution truncated to the input length, rescaled to the input's peak.

    The rescaling makes the map homogeneous but not additive; ``normalize=False``
    returns the plain (linear) truncated convolution.
    """
    if clean.sample_rate != rir.sample_rate:
        raise InvalidInputError(f"rate mismatch: audio {clean.sample_rate} Hz, RIR {rir.sample_rate} Hz")
    wet = sps.convolve(clean.samples, rir.taps, mode="full")[: len(clean)]
    if not normalize:
        return AudioBuffer(wet, clean.sample_rate)
    peak_in = np.max(np.abs(clean.samples)) if len(clean) else 0.0
    peak_out = np.max(np.abs(wet)) if len(clean) else 0.0
    if peak_out > 0.0:
        wet = wet * (peak_in / peak_out)
    return AudioBuffer(wet, clean.sample_rate)


def band_limit(audio: AudioBuffer, target_hz: int) -> AudioBuffer:
    """Resample down to ``target_hz`` and back, keeping the original rate and length."""
    if target_hz is None or target_hz <= 0 or target_hz >= audio.sample_rate:
        raise InvalidInputError(f"target rate {target_hz} must be in (0, {audio.sample_rate})")
    low = resample(audio, target_hz)
    back = resample(low, audio.sample_rate).samples
    n = len(audio)
    back = back[:n] if back.shape[0] >= n else np.pad(back, (0, n - back.shape[0]))
    return AudioBuffer(back, audio.sample_rate)


def apply_spec(
    clean: AudioBuffer, spec: DegradationSpec, assets: Assets | Mapping | None = None
) -> tuple[AudioBuffer, AudioBuffer]:
    """Apply the stages of ``spec`` in order; returns ``(degraded, clean)``."""
    noises = getattr(assets, "noises", None) if assets is not None else {}
    rirs = getattr(assets, "rirs", None) if assets is not None else {}
    if isinstance(assets, Mapping):
        noises, rirs = assets.get("noises", {}), assets.get("rirs", {})
    rng = np.random.default_rng(spec.seed)
    out = clean
    for stage in spec.stages:
        if isinstance(stage, NoiseStage):
            if stage.source_id not in noises:
                raise AssetLookupError(f"unknown noise source {stage.source_id!r}")
            out = add_noise(out, noises[stage.source_id], stage.snr_db, rng)
        elif isinstance(stage, ReverbStage):
            if stage.rir_id not in rirs:
                raise AssetLookupError(f"unknown RIR {stage.rir_id!r}")
            out = convolve_rir(out, rirs[stage.rir_id])
        elif isinstance(stage, BandlimitStage):
            out = band_limit(out, stage.target_hz)
        else:
            raise InvalidInputError(f"unknown stage {stage!r}")
    return out, clean


# --- synthetic assets ----------------------------------------------------------------


def _resonator(x: np.ndarray, freq: float, bandwidth: float, fs: int) -> np.ndarray:
    r = np.exp(-np.pi * bandwidth / fs)
    theta = 2.0 * np.pi * freq / fs
    return sps.lfilter([1.0 - r], [1.0, -2.0 * r * np.cos(theta), r * r], x)


def speech_like(rng: np.random.Generator, seconds: float, sample_rate: int = 16000, floor_db: float = -80.0) -> np.ndarray:
    """Harmonic speech-like signal: voiced syllables through three formant resonators,
    occasional fricative bursts and short pauses, peak-normalised to 0.5."""
    fs = sample_rate
    n = int(round(seconds * fs))
    out = np.zeros(n)
    pos = 0
    while pos < n:
        seg = min(int(rng.uniform(0.12, 0.30) * fs), n - pos)
        kind = rng.random()
        if kind < 0.75:
            f0 = rng.uniform(90.0, 220.0) * np.exp(np.cumsum(rng.normal(0.0, 5e-4, seg)))
            phase = np.cumsum(2.0 * np.pi * f0 / fs)
            n_harm = int(0.45 * fs / f0.max())
            k = np.arange(1, n_harm + 1)
            source = np.sin(np.outer(phase, k) + rng.uniform(0, 2 * np.pi, n_harm)) @ (1.0 / k)
            y = np.zeros(seg)
            for lo, hi, bw in ((300, 800, 80), (900, 2400, 100), (2500, 3500, 150)):
                y += _resonator(source, rng.uniform(lo, hi), bw, fs)
        elif kind < 0.88:
            b, a = sps.butter(4, 3000.0, "high", fs=fs)
            y = 0.3 * sps.lfilter(b, a, rng.standard_normal(seg))
        else:
            y = np.zeros(seg)
        out[pos : pos + seg] = y * np.sin(np.pi * (np.arange(seg) + 0.5) / seg) ** 0.5
        pos += seg
    peak = np.max(np.abs(out))
    if peak > 0:
        out *= 0.5 / peak
    return out + 0.5 * 10.0 ** (floor_db / 20.0) * rng.standard_normal(n)


def white_noise(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.standard_normal(n)


def pink_noise(rng: np.random.Generator, n: int) -> np.ndarray:
    """1/f power spectrum via FFT shaping, unit RMS."""
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(spec.shape[0], dtype=np.float64)
    f[0] = np.inf
    y = np.fft.irfft(spec / np.sqrt(f), n)
    return y / np.sqrt(_power(y))


def babble_noise(rng: np.random.Generator, n: int, sample_rate: int = 16000, talkers: int = 6) -> np.ndarray:
    y = sum(speech_like(rng, n / sample_rate, sample_rate) for _ in range(talkers))
    return y / np.sqrt(_power(y))


def exponential_rir(rng: np.random.Generator, rt60: float, sample_rate: int = 16000) -> np.ndarray:
    """Gaussian tail with amplitude envelope falling 60 dB at ``rt60`` seconds, unit peak."""
    n = int(round(2.0 * rt60 * sample_rate))
    t = np.arange(n) / sample_rate
    h = rng.standard_normal(n) * 10.0 ** (-3.0 * t / rt60)
    h[0] = np.max(np.abs(h)) * 1.5
    return h / np.max(np.abs(h))


def synth_assets(
    seed: int = 0,
    sample_rate: int = 16000,
    n_clean: int = 20,
    clean_seconds: float = 2.0,
    noise_seconds: float = 10.0,
    rt60s: tuple[float, ...] = (0.3, 0.5, 0.8),
) -> Assets:
    """Seeded stand-ins for clean speech, noise and RIR corpora."""
    ss = np.random.SeedSequence(seed)
    r_noise, r_rir, r_clean = (np.random.default_rng(s) for s in ss.spawn(3))
    n_noise = int(round(noise_seconds * sample_rate))
    noises = {
        "white": AudioBuffer(white_noise(r_noise, n_noise), sample_rate),
        "pink": AudioBuffer(pink_noise(r_noise, n_noise), sample_rate),
        "babble": AudioBuffer(babble_noise(r_noise, n_noise, sample_rate), sample_rate),
    }
    rirs = {f"rt{rt:g}": Rir(exponential_rir(r_rir, rt, sample_rate), sample_rate) for rt in rt60s}
    clean = [AudioBuffer(speech_like(r_clean, clean_seconds, sample_rate), sample_rate) for _ in range(n_clean)]
    return Assets(noises, rirs, clean)
