"""Objective evaluation: log-spectral distance, SNR, token accuracy, real-time factor."""

from __future__ import annotations

import csv
import os
import platform
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .codec import TokenSequence
from .dsp import AudioBuffer, stft_amp_phase
from .errors import DegenerateInputError, InvalidInputError

LSD_FRAME = 1024
LSD_SHIFT = 256
LSD_EPS = 1e-8


def _check_pair(a: AudioBuffer, b: AudioBuffer) -> None:
    if len(a) != len(b):
        raise InvalidInputError(f"length mismatch: {len(a)} vs {len(b)} samples")
    if a.sample_rate != b.sample_rate:
        raise InvalidInputError(f"rate mismatch: {a.sample_rate} vs {b.sample_rate} Hz")


def lsd(reference: AudioBuffer, test: AudioBuffer) -> float:
    """Log-spectral distance in dB.

    Frame-mean of the per-frame RMS (over bins) of
    ``20 log10((|S_ref| + eps) / (|S_test| + eps))`` with a 1024-sample Hann
    STFT, hop 256, ``eps = 1e-8``.
    """
    _check_pair(reference, test)
    ref = stft_amp_phase(reference, LSD_FRAME, LSD_SHIFT, LSD_FRAME).amplitude
    tst = stft_amp_phase(test, LSD_FRAME, LSD_SHIFT, LSD_FRAME).amplitude
    diff = 20.0 * np.log10((ref + LSD_EPS) / (tst + LSD_EPS))
    return float(np.mean(np.sqrt(np.mean(diff**2, axis=1))))


def signal_power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x)))


def measure_snr(clean: AudioBuffer, noisy: AudioBuffer) -> float:
    _check_pair(clean, noisy)
    residual = signal_power(noisy.samples - clean.samples)
    if residual == 0.0:
        raise DegenerateInputError("noisy signal equals clean signal; SNR is infinite")
    p_clean = signal_power(clean.samples)
    if p_clean == 0.0:
        raise DegenerateInputError("clean signal has zero power")
    return 10.0 * np.log10(p_clean / residual)


@dataclass(frozen=True)
class TokenAccuracy:
    per_branch: tuple[float, ...]
    overall: float


def token_accuracy(predicted: TokenSequence | np.ndarray, target: TokenSequence | np.ndarray) -> TokenAccuracy:
    p = predicted.tokens if isinstance(predicted, TokenSequence) else np.asarray(predicted)
    t = target.tokens if isinstance(target, TokenSequence) else np.asarray(target)
    if p.shape != t.shape or p.ndim != 2 or p.shape[0] == 0:
        raise InvalidInputError(f"token shape mismatch: {p.shape} vs {t.shape}")
    hits = p == t
    return TokenAccuracy(tuple(float(v) for v in hits.mean(axis=0)), float(hits.mean()))


@dataclass
class RtfReport:
    wall_seconds: float
    audio_seconds: float
    rtf: float
    speedup_vs_realtime: float
    workers: int
    pipeline: str = ""
    hardware: str = field(default_factory=lambda: f"{platform.processor() or platform.machine()}, {os.cpu_count()} cpu")
    repeats: int = 0
    spread: float = 0.0  # (max - min) / median over the timed repeats

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())


def bench_rtf(
    pipeline: Callable[[AudioBuffer], object],
    audio: AudioBuffer,
    workers: int = 1,
    repeats: int = 3,
    name: str = "",
    min_audio_seconds: float = 10.0,
) -> RtfReport:
    """Median wall time of ``repeats`` runs (after one untimed warm-up) per second of audio."""
    if repeats < 3:
        raise InvalidInputError(f"repeats must be >= 3, got {repeats}")
    if audio.duration < min_audio_seconds:
        raise InvalidInputError(f"benchmark audio must be >= {min_audio_seconds} s, got {audio.duration:.2f} s")
    times = []
    for run in range(repeats + 1):
        start = time.perf_counter()
        try:
            pipeline(audio)
        except Exception as exc:
            raise RuntimeError(f"pipeline {name or pipeline!r} failed on run {run}") from exc
        if run:
            times.append(time.perf_counter() - start)
    wall = statistics.median(times)
    rtf = wall / audio.duration
    return RtfReport(
        wall_seconds=wall,
        audio_seconds=audio.duration,
        rtf=rtf,
        speedup_vs_realtime=1.0 / rtf,
        workers=workers,
        pipeline=name,
        repeats=repeats,
        spread=(max(times) - min(times)) / wall,
    )


def write_table(path: str | Path, rows: list[dict]) -> None:
    """Tab-separated table with a header row, for external plotting."""
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), delimiter="\t", lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
