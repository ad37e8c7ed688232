"""Token-domain speech enhancement with parallel per-group prediction branches.

A degraded waveform is tokenized by the frozen codec; a spectral feature
extractor turns the same waveform into one conditioning vector per token
frame; branch ``n`` maps (degraded token of group ``n``, features) to a
distribution over clean tokens of group ``n``. Branches share nothing, so
they can be evaluated concurrently. The serial variant runs over a residual
quantizer and additionally conditions stage ``n`` on the clean tokens chosen
by stages ``1..n-1``.

Backbone, per branch: embedding lookup, concatenation with the features,
one tanh hidden layer, linear logits, softmax. Feature extractor: a linear
projection of ``R`` stacked STFT frames (log-compressed amplitude and wrapped
phase) followed by tanh. All gradients are hand-derived.
"""

from __future__ import annotations

import io
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .codec import Codec, TokenSequence, codec_from_bytes, codec_to_bytes, encode
from .dsp import STFT_FFT_SIZE, STFT_FRAME_LENGTH, STFT_FRAME_SHIFT, AudioBuffer, stft_amp_phase
from .errors import (
    ConfigurationError,
    CorruptModelError,
    InsufficientDataError,
    InvalidInputError,
    TrainingDivergenceError,
)

DOWNSAMPLE = 8
INFERENCE_CHUNK = 256  # frames per work item; fixed so results never depend on the worker count


@dataclass
class EnhancerConfig:
    feature_dim: int = 64
    hidden: int = 128
    lr: float = 1e-2
    epochs: int = 50
    batch: int = 64
    seed: int = 0
    context: bool = False
    frame_length: int = STFT_FRAME_LENGTH
    frame_shift: int = STFT_FRAME_SHIFT
    fft_size: int = STFT_FFT_SIZE
    downsample: int = DOWNSAMPLE


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - np.max(z, axis=-1, keepdims=True))
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - np.max(z, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def sample_token(p: np.ndarray) -> int:
    """Argmax sampling; 1-based, ties resolved to the lowest index."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise InvalidInputError("expected a non-empty 1-D distribution")
    if not np.all(np.isfinite(p)):
        raise InvalidInputError("distribution has non-finite entries")
    return int(np.argmax(p)) + 1


class SpectralFeatureExtractor:
    """Maps audio to one ``C``-dim feature per ``frame_shift * downsample`` samples."""

    def __init__(
        self,
        weight: np.ndarray,
        bias: np.ndarray,
        frame_length: int = STFT_FRAME_LENGTH,
        frame_shift: int = STFT_FRAME_SHIFT,
        fft_size: int = STFT_FFT_SIZE,
        downsample: int = DOWNSAMPLE,
        sample_rate: int = 16000,
    ):
        self.frame_length = int(frame_length)
        self.frame_shift = int(frame_shift)
        self.fft_size = int(fft_size)
        self.downsample = int(downsample)
        self.sample_rate = int(sample_rate)
        self.weight = np.array(weight, dtype=np.float64)
        self.bias = np.array(bias, dtype=np.float64)
        if self.weight.shape != (self.bias.shape[0], self.input_dim):
            raise InvalidInputError(f"extractor weight {self.weight.shape} != ({self.bias.shape[0]}, {self.input_dim})")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def input_dim(self) -> int:
        return self.downsample * 2 * self.n_bins

    @property
    def output_dim(self) -> int:
        return self.bias.shape[0]

    @property
    def hop_samples(self) -> int:
        return self.frame_shift * self.downsample

    def stack(self, audio: AudioBuffer, start: int = 0, stop: int | None = None) -> np.ndarray:
        """Stacked (log1p amplitude, phase) STFT inputs, one row per token frame in [start, stop)."""
        if audio.sample_rate != self.sample_rate:
            raise ConfigurationError(f"audio rate {audio.sample_rate} Hz != extractor rate {self.sample_rate} Hz")
        hop = self.hop_samples
        n_frames = max(1, -(-len(audio) // hop))
        x = np.zeros(max(n_frames * hop, self.frame_length))
        x[: len(audio)] = audio.samples
        stop = n_frames if stop is None else min(stop, n_frames)
        rows = (start * self.downsample, stop * self.downsample)
        stft = stft_amp_phase(
            AudioBuffer(x, audio.sample_rate), self.frame_length, self.frame_shift, self.fft_size, frame_range=rows
        )
        per_frame = np.concatenate([np.log1p(stft.amplitude), stft.phase], axis=1)
        return per_frame.reshape(stop - start, self.input_dim)

    def n_frames(self, n_samples: int) -> int:
        return max(1, -(-n_samples // self.hop_samples))

    def project(self, stacked: np.ndarray) -> np.ndarray:
        return np.tanh(stacked @ self.weight.T + self.bias)


def extract_features(y: AudioBuffer, extractor: SpectralFeatureExtractor) -> np.ndarray:
    return extractor.project(extractor.stack(y))


@dataclass
class PredictionBranch:
    embedding: np.ndarray  # M x C, one row per degraded token
    w1: np.ndarray  # H x input_width
    b1: np.ndarray  # H
    w2: np.ndarray  # M x H
    b2: np.ndarray  # M
    index: int = 0

    @property
    def codebook_size(self) -> int:
        return self.embedding.shape[0]

    def logits(self, inputs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        h = np.tanh(inputs @ self.w1.T + self.b1)
        return h @ self.w2.T + self.b2, h

    def predict(self, inputs: np.ndarray) -> np.ndarray:
        """1-based argmax tokens for a batch of branch inputs."""
        z, _ = self.logits(inputs)
        return np.argmax(softmax(z), axis=1) + 1


def branch_forward(token: int, s: np.ndarray, branch: PredictionBranch) -> np.ndarray:
    """Clean-token distribution for one frame: softmax(classifier([U[token], s]))."""
    m, c = branch.embedding.shape
    if not 1 <= int(token) <= m or int(token) != token:
        raise InvalidInputError(f"token {token} outside [1, {m}]")
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 1 or s.shape[0] + c != branch.w1.shape[1]:
        raise InvalidInputError(f"feature vector of shape {s.shape} does not fit branch width {branch.w1.shape[1]}")
    o = np.concatenate([branch.embedding[int(token) - 1], s])[None, :]
    z, _ = branch.logits(o)
    return softmax(z)[0]


class EnhancerModel:
    """Feature extractor + ``N`` parallel branches over a frozen group-VQ codec."""

    serial = False

    def __init__(
        self,
        extractor: SpectralFeatureExtractor,
        branches: Sequence[PredictionBranch],
        codec: Codec,
        context: bool = False,
    ):
        self.extractor = extractor
        self.branches = list(branches)
        self.codec = codec
        self.context = bool(context)
        self._validate()

    def _validate(self) -> None:
        expected_kind = "rvq" if self.serial else "gvq"
        if self.codec.quantizer.kind != expected_kind:
            raise ConfigurationError(f"{type(self).__name__} needs a {expected_kind} codec, got {self.codec.quantizer.kind}")
        if len(self.branches) != self.codec.n_groups:
            raise ConfigurationError(f"{len(self.branches)} branches for a codec with N = {self.codec.n_groups}")
        if self.extractor.hop_samples != self.codec.model.hop_samples:
            raise ConfigurationError(
                f"feature hop {self.extractor.hop_samples} != codec token hop {self.codec.model.hop_samples}"
            )
        if self.extractor.sample_rate != self.codec.model.sample_rate:
            raise ConfigurationError("extractor and codec sample rates differ")
        c = self.feature_dim
        for n, br in enumerate(self.branches):
            if br.embedding.shape != (self.codec.codebook_size, c):
                raise ConfigurationError(f"branch {n} embedding {br.embedding.shape} != ({self.codec.codebook_size}, {c})")
            if br.w1.shape[1] != self.input_width or br.w2.shape != (self.codec.codebook_size, br.w1.shape[0]):
                raise ConfigurationError(f"branch {n} classifier shapes do not match the model layout")

    @property
    def n_groups(self) -> int:
        return len(self.branches)

    @property
    def codebook_size(self) -> int:
        return self.codec.codebook_size

    @property
    def feature_dim(self) -> int:
        return self.extractor.output_dim

    @property
    def hidden(self) -> int:
        return self.branches[0].w1.shape[0]

    @property
    def feature_width(self) -> int:
        return self.feature_dim * (3 if self.context else 1)

    @property
    def input_width(self) -> int:
        return self.feature_dim * (2 if self.serial else 1) + self.feature_width

    def params(self) -> dict[str, np.ndarray]:
        """Trainable arrays by name (the live arrays, not copies)."""
        out = {"extractor.weight": self.extractor.weight, "extractor.bias": self.extractor.bias}
        for n, br in enumerate(self.branches):
            for name in ("embedding", "w1", "b1", "w2", "b2"):
                out[f"branch{n}.{name}"] = getattr(br, name)
        return out


class SerialEnhancerModel(EnhancerModel):
    """Residual-VQ baseline: stage ``n`` also sees the mean embedding of earlier stages' clean tokens."""

    serial = True


def init_enhancer(codec: Codec, config: EnhancerConfig, serial: bool = False) -> EnhancerModel:
    rng = np.random.default_rng(config.seed)
    c, h, m = config.feature_dim, config.hidden, codec.codebook_size
    ex_in = config.downsample * 2 * (config.fft_size // 2 + 1)
    extractor = SpectralFeatureExtractor(
        rng.normal(0.0, 1.0 / np.sqrt(ex_in), (c, ex_in)),
        np.zeros(c),
        config.frame_length,
        config.frame_shift,
        config.fft_size,
        config.downsample,
        codec.model.sample_rate,
    )
    width = c * (2 if serial else 1) + c * (3 if config.context else 1)
    branches = [
        PredictionBranch(
            embedding=rng.normal(0.0, 1.0, (m, c)),
            w1=rng.normal(0.0, 1.0 / np.sqrt(width), (h, width)),
            b1=np.zeros(h),
            w2=rng.normal(0.0, 1.0 / np.sqrt(h), (m, h)),
            b2=np.zeros(m),
            index=n,
        )
        for n in range(codec.n_groups)
    ]
    cls = SerialEnhancerModel if serial else EnhancerModel
    return cls(extractor, branches, codec, config.context)


def with_context(s: np.ndarray) -> np.ndarray:
    """[s_{t-1}, s_t, s_{t+1}] per row with zero vectors past either end."""
    prev = np.zeros_like(s)
    nxt = np.zeros_like(s)
    prev[1:] = s[:-1]
    nxt[:-1] = s[1:]
    return np.concatenate([prev, s, nxt], axis=1)


def pooled_context(model: EnhancerModel, n: int, previous: np.ndarray) -> np.ndarray:
    """Mean embedding of the clean tokens chosen by stages ``0..n-1`` (zeros for the first stage)."""
    rows = previous.shape[0]
    if n == 0:
        return np.zeros((rows, model.feature_dim))
    return sum(model.branches[j].embedding[previous[:, j] - 1] for j in range(n)) / n


def branch_inputs(
    model: EnhancerModel, n: int, degraded: np.ndarray, features: np.ndarray, previous: np.ndarray | None = None
) -> np.ndarray:
    """Classifier inputs of branch ``n``: [U_n[d_n], (pooled previous clean tokens), features]."""
    parts = [model.branches[n].embedding[degraded[:, n] - 1]]
    if model.serial:
        parts.append(pooled_context(model, n, previous))
    parts.append(features)
    return np.concatenate(parts, axis=1)


# --- training ------------------------------------------------------------------------


@dataclass
class Batch:
    stacked: np.ndarray  # B x Din
    degraded: np.ndarray  # B x N, 1-based
    clean: np.ndarray  # B x N, 1-based
    stacked_prev: np.ndarray | None = None
    stacked_next: np.ndarray | None = None
    mask_prev: np.ndarray | None = None
    mask_next: np.ndarray | None = None


@dataclass
class LossResult:
    loss: float
    branch_losses: list[float]
    grads: dict[str, np.ndarray]
    predictions: np.ndarray  # B x N argmax tokens under teacher forcing


def loss_and_grads(model: EnhancerModel, batch: Batch, need_grads: bool = True) -> LossResult:
    """Summed per-branch cross-entropy (batch mean) and its gradients.

    Serial models are teacher-forced: stage ``n`` is conditioned on the
    target clean tokens of earlier stages.
    """
    ex = model.extractor
    b = batch.stacked.shape[0]
    rows = np.arange(b)
    s = np.tanh(batch.stacked @ ex.weight.T + ex.bias)
    if model.context:
        sp = np.tanh(batch.stacked_prev @ ex.weight.T + ex.bias)
        sn = np.tanh(batch.stacked_next @ ex.weight.T + ex.bias)
        feats = np.concatenate([sp * batch.mask_prev[:, None], s, sn * batch.mask_next[:, None]], axis=1)
    else:
        feats = s
    grads = {k: np.zeros_like(v) for k, v in model.params().items()} if need_grads else {}
    d_feats = np.zeros_like(feats)
    c = model.feature_dim
    total = 0.0
    losses = []
    preds = np.empty((b, model.n_groups), dtype=np.int64)
    for n, br in enumerate(model.branches):
        o = branch_inputs(model, n, batch.degraded, feats, batch.clean)
        z, h = br.logits(o)
        logp = log_softmax(z)
        target = batch.clean[:, n] - 1
        loss_n = float(-np.mean(logp[rows, target]))
        losses.append(loss_n)
        total += loss_n
        preds[:, n] = np.argmax(z, axis=1) + 1
        if not need_grads:
            continue
        dz = np.exp(logp)
        dz[rows, target] -= 1.0
        dz /= b
        grads[f"branch{n}.w2"] += dz.T @ h
        grads[f"branch{n}.b2"] += dz.sum(axis=0)
        da = (dz @ br.w2) * (1.0 - h * h)
        grads[f"branch{n}.w1"] += da.T @ o
        grads[f"branch{n}.b1"] += da.sum(axis=0)
        do = da @ br.w1
        np.add.at(grads[f"branch{n}.embedding"], batch.degraded[:, n] - 1, do[:, :c])
        if model.serial and n > 0:
            d_pool = do[:, c : 2 * c] / n
            for j in range(n):
                np.add.at(grads[f"branch{j}.embedding"], batch.clean[:, j] - 1, d_pool)
        d_feats += do[:, -model.feature_width :]
    if need_grads:
        if model.context:
            dsp, ds, dsn = np.split(d_feats, 3, axis=1)
            dq = ds * (1.0 - s * s)
            dqp = dsp * batch.mask_prev[:, None] * (1.0 - sp * sp)
            dqn = dsn * batch.mask_next[:, None] * (1.0 - sn * sn)
            grads["extractor.weight"] += dq.T @ batch.stacked + dqp.T @ batch.stacked_prev + dqn.T @ batch.stacked_next
            grads["extractor.bias"] += dq.sum(axis=0) + dqp.sum(axis=0) + dqn.sum(axis=0)
        else:
            dq = d_feats * (1.0 - s * s)
            grads["extractor.weight"] += dq.T @ batch.stacked
            grads["extractor.bias"] += dq.sum(axis=0)
    return LossResult(total, losses, grads, preds)


@dataclass
class TrainReport:
    losses: list[float] = field(default_factory=list)
    accuracy: list[tuple[float, ...]] = field(default_factory=list)  # per epoch, per branch (running)
    final_accuracy: tuple[float, ...] = ()
    epochs: int = 0
    seed: int = 0
    codec_checksum: str = ""

    def to_text(self) -> str:
        lines = [f"epochs={self.epochs}", f"seed={self.seed}", f"codec_sha256={self.codec_checksum}"]
        for e, (loss, acc) in enumerate(zip(self.losses, self.accuracy), start=1):
            lines.append(f"epoch={e} loss={loss:.6f} " + " ".join(f"acc{n + 1}={a:.4f}" for n, a in enumerate(acc)))
        lines.append("final " + " ".join(f"acc{n + 1}={a:.4f}" for n, a in enumerate(self.final_accuracy)))
        return "\n".join(lines) + "\n"


@dataclass
class TrainingSet:
    stacked: np.ndarray
    degraded: np.ndarray
    clean: np.ndarray
    prev: np.ndarray  # index of previous frame in the same utterance, -1 at the start
    next: np.ndarray

    def batch(self, idx: np.ndarray, context: bool) -> Batch:
        if not context:
            return Batch(self.stacked[idx], self.degraded[idx], self.clean[idx])
        p, nx = self.prev[idx], self.next[idx]
        return Batch(
            self.stacked[idx],
            self.degraded[idx],
            self.clean[idx],
            self.stacked[np.maximum(p, 0)],
            self.stacked[np.maximum(nx, 0)],
            (p >= 0).astype(np.float64),
            (nx >= 0).astype(np.float64),
        )


def build_training_set(
    pairs: Sequence[tuple[AudioBuffer, AudioBuffer]], codec: Codec, extractor: SpectralFeatureExtractor
) -> TrainingSet:
    if len(pairs) == 0:
        raise InsufficientDataError("training corpus is empty")
    stacked, deg, cln, prev, nxt = [], [], [], [], []
    offset = 0
    for y, x in pairs:
        if len(y) != len(x):
            raise InvalidInputError(f"pair length mismatch: {len(y)} vs {len(x)}")
        dy = codec.tokenize(y).tokens
        dx = codec.tokenize(x).tokens
        sy = extractor.stack(y)
        if sy.shape[0] != dy.shape[0]:
            raise ConfigurationError(f"{sy.shape[0]} feature frames vs {dy.shape[0]} token frames")
        f = dy.shape[0]
        stacked.append(sy)
        deg.append(dy)
        cln.append(dx)
        idx = np.arange(offset, offset + f)
        prev.append(np.where(idx > offset, idx - 1, -1))
        nxt.append(np.where(idx < offset + f - 1, idx + 1, -1))
        offset += f
    return TrainingSet(
        np.concatenate(stacked), np.concatenate(deg), np.concatenate(cln), np.concatenate(prev), np.concatenate(nxt)
    )


def evaluate_accuracy(model: EnhancerModel, data: TrainingSet, chunk: int = 1024) -> tuple[float, ...]:
    hits = np.zeros(model.n_groups)
    for start in range(0, data.stacked.shape[0], chunk):
        idx = np.arange(start, min(start + chunk, data.stacked.shape[0]))
        res = loss_and_grads(model, data.batch(idx, model.context), need_grads=False)
        hits += (res.predictions == data.clean[idx]).sum(axis=0)
    return tuple(float(h) for h in hits / data.stacked.shape[0])


def train_enhancer(
    pairs: Sequence[tuple[AudioBuffer, AudioBuffer]],
    codec: Codec,
    config: EnhancerConfig | None = None,
    serial: bool = False,
    log: Callable[[str], None] | None = None,
) -> tuple[EnhancerModel, TrainReport]:
    """Mini-batch SGD on the summed per-branch cross-entropy; the codec is never modified.

    ``pairs`` holds ``(degraded, clean)`` tuples.
    """
    config = config or EnhancerConfig()
    if len(pairs) == 0:
        raise InsufficientDataError("training corpus is empty")
    checksum = codec.checksum()
    model = init_enhancer(codec, config, serial)
    data = build_training_set(pairs, codec, model.extractor)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0])
    params = model.params()
    report = TrainReport(epochs=config.epochs, seed=config.seed, codec_checksum=checksum)
    n_frames = data.stacked.shape[0]
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n_frames)
        loss_sum = 0.0
        hits = np.zeros(model.n_groups)
        for start in range(0, n_frames, config.batch):
            idx = order[start : start + config.batch]
            res = loss_and_grads(model, data.batch(idx, model.context))
            if not np.isfinite(res.loss):
                raise TrainingDivergenceError(epoch)
            loss_sum += res.loss * idx.shape[0]
            hits += (res.predictions == data.clean[idx]).sum(axis=0)
            for name, g in res.grads.items():
                params[name] -= config.lr * g
        report.losses.append(loss_sum / n_frames)
        report.accuracy.append(tuple(float(h) for h in hits / n_frames))
        if log:
            log(f"epoch {epoch}: loss {report.losses[-1]:.5f}")
    for name, arr in params.items():
        if not np.all(np.isfinite(arr)):
            raise TrainingDivergenceError(config.epochs, f"parameter {name} became non-finite")
    report.final_accuracy = evaluate_accuracy(model, data)
    if codec.checksum() != checksum:
        raise RuntimeError("codec parameters changed during enhancer training")
    return model, report


# --- inference -----------------------------------------------------------------------


def _feature_chunk(model: EnhancerModel, y: AudioBuffer, start: int) -> np.ndarray:
    ex = model.extractor
    return ex.project(ex.stack(y, start, start + INFERENCE_CHUNK))


def _features(model: EnhancerModel, y: AudioBuffer) -> np.ndarray:
    # chunked to bound the size of the stacked STFT matrix on long inputs
    n = model.extractor.n_frames(len(y))
    s = np.concatenate([_feature_chunk(model, y, a) for a in range(0, n, INFERENCE_CHUNK)])
    return with_context(s) if model.context else s


def _check_frames(feats: np.ndarray, deg: np.ndarray) -> None:
    if feats.shape[0] != deg.shape[0]:
        raise ConfigurationError(f"{feats.shape[0]} feature frames vs {deg.shape[0]} token frames")


def _predict_serial(model: EnhancerModel, y: AudioBuffer, stage_hook) -> tuple[np.ndarray, TokenSequence]:
    degraded = model.codec.tokenize(y)
    feats = _features(model, y)
    deg = degraded.tokens
    _check_frames(feats, deg)
    out = np.empty_like(deg)
    for a in range(0, deg.shape[0], INFERENCE_CHUNK):
        sl = slice(a, a + INFERENCE_CHUNK)
        for n, br in enumerate(model.branches):
            o = branch_inputs(model, n, deg[sl], feats[sl], out[sl])
            if stage_hook:
                stage_hook(n, o)
            out[sl, n] = br.predict(o)
    return out, degraded


def _predict_parallel(model: EnhancerModel, y: AudioBuffer, workers: int) -> tuple[np.ndarray, TokenSequence]:
    """Independent work items fanned out to a thread pool in two rounds.

    Round one: feature chunks and the per-group quantization of the degraded
    input (group-VQ groups do not depend on each other). Round two: one item
    per (chunk, branch). Chunk boundaries are fixed, so results do not depend
    on ``workers``.
    """
    q = model.codec.quantizer
    blocks = q.split(encode(y, model.codec.model))
    starts = list(range(0, model.extractor.n_frames(len(y)), INFERENCE_CHUNK))

    def prep(item: tuple[str, int]) -> np.ndarray:
        kind, i = item
        return q.quantize_group(i, blocks[i]) if kind == "group" else _feature_chunk(model, y, i)

    def branch(item: tuple[int, int]) -> np.ndarray:
        a, n = item
        sl = slice(a, a + INFERENCE_CHUNK)
        return model.branches[n].predict(branch_inputs(model, n, deg[sl], feats[sl]))

    round_one = [("group", n) for n in range(q.n_groups)] + [("chunk", a) for a in starts]
    round_two = [(a, n) for a in starts for n in range(model.n_groups)]
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        run = pool.map if pool else map
        prepared = list(run(prep, round_one))
        deg = np.stack(prepared[: q.n_groups], axis=1)
        feats = np.concatenate(prepared[q.n_groups :])
        if model.context:
            feats = with_context(feats)
        _check_frames(feats, deg)
        results = list(run(branch, round_two))
    finally:
        if pool:
            pool.shutdown()
    out = np.empty_like(deg)
    for (a, n), tok in zip(round_two, results):
        out[a : a + INFERENCE_CHUNK, n] = tok
    return out, TokenSequence(deg, q.codebook_size, len(y))


def predict_tokens(
    model: EnhancerModel,
    y: AudioBuffer,
    workers: int = 1,
    stage_hook: Callable[[int, np.ndarray], None] | None = None,
) -> tuple[TokenSequence, TokenSequence]:
    """Predicted clean tokens and the degraded tokens of ``y``.

    Parallel models spread feature extraction, per-group quantization and the
    (chunk, branch) predictions over ``workers`` threads; serial models
    evaluate stages strictly in order. ``stage_hook`` is called with each
    stage's classifier inputs (serial models only).
    """
    if workers < 1:
        raise InvalidInputError(f"workers must be >= 1, got {workers}")
    if model.codec.n_groups != model.n_groups:
        raise ConfigurationError("model and codec group counts differ")
    with threadpool_limits(limits=1, user_api="blas"):
        if model.serial:
            out, degraded = _predict_serial(model, y, stage_hook)
        else:
            out, degraded = _predict_parallel(model, y, workers)
    return TokenSequence(out, model.codebook_size, len(y)), degraded


def enhance_parallel(y: AudioBuffer, model: EnhancerModel, workers: int = 1) -> AudioBuffer:
    if model.serial:
        raise ConfigurationError("enhance_parallel needs a parallel (group-VQ) model")
    tokens, _ = predict_tokens(model, y, workers)
    return model.codec.detokenize(tokens)


def enhance_serial(y: AudioBuffer, model: SerialEnhancerModel) -> AudioBuffer:
    if not model.serial:
        raise ConfigurationError("enhance_serial needs a serial (residual-VQ) model")
    tokens, _ = predict_tokens(model, y)
    return model.codec.detokenize(tokens)


def enhance(y: AudioBuffer, model: EnhancerModel, workers: int = 1) -> AudioBuffer:
    return enhance_serial(y, model) if model.serial else enhance_parallel(y, model, workers)


# --- serialization -------------------------------------------------------------------

# Appended after a codec container, little-endian:
#   b"PGSE", u32 version, u32 serial, u32 context, u32 C, H, N, M,
#   u32 frame_length, frame_shift, fft_size, downsample,
#   then float64 row-major: extractor weight (C x Din), bias (C),
#   and per branch: embedding (M x C), w1 (H x width), b1 (H), w2 (M x H), b2 (M).
ENHANCER_MAGIC = b"PGSE"
ENHANCER_VERSION = 1
_ENH_HEADER = struct.Struct("<4s11I")


def enhancer_to_bytes(model: EnhancerModel) -> bytes:
    ex = model.extractor
    buf = io.BytesIO()
    buf.write(codec_to_bytes(model.codec))
    buf.write(
        _ENH_HEADER.pack(
            ENHANCER_MAGIC,
            ENHANCER_VERSION,
            int(model.serial),
            int(model.context),
            model.feature_dim,
            model.hidden,
            model.n_groups,
            model.codebook_size,
            ex.frame_length,
            ex.frame_shift,
            ex.fft_size,
            ex.downsample,
        )
    )
    arrays = [ex.weight, ex.bias]
    for br in model.branches:
        arrays += [br.embedding, br.w1, br.b1, br.w2, br.b2]
    for arr in arrays:
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def enhancer_from_bytes(data: bytes) -> EnhancerModel:
    codec, pos = codec_from_bytes(data)
    if len(data) - pos < _ENH_HEADER.size:
        raise CorruptModelError("enhancer section missing or truncated")
    magic, version, serial, context, c, h, n, m, fl, fs, nfft, r = _ENH_HEADER.unpack_from(data, pos)
    if magic != ENHANCER_MAGIC:
        raise CorruptModelError(f"bad enhancer magic {magic!r}")
    if version != ENHANCER_VERSION:
        raise CorruptModelError(f"unsupported enhancer format version {version}")
    pos += _ENH_HEADER.size
    din = r * 2 * (nfft // 2 + 1)
    width = c * (2 if serial else 1) + c * (3 if context else 1)

    def take(*shape: int) -> np.ndarray:
        nonlocal pos
        count = int(np.prod(shape))
        if pos + 8 * count > len(data):
            raise CorruptModelError("enhancer section truncated")
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * count
        return arr

    try:
        extractor = SpectralFeatureExtractor(take(c, din), take(c), fl, fs, nfft, r, codec.model.sample_rate)
        branches = [PredictionBranch(take(m, c), take(h, width), take(h), take(m, h), take(m), i) for i in range(n)]
        if pos != len(data):
            raise CorruptModelError(f"{len(data) - pos} trailing bytes after enhancer section")
        cls = SerialEnhancerModel if serial else EnhancerModel
        return cls(extractor, branches, codec, bool(context))
    except (InvalidInputError, ConfigurationError) as exc:
        raise CorruptModelError(f"invalid enhancer container: {exc}") from exc


def save_enhancer(path: str | Path, model: EnhancerModel) -> None:
    Path(path).write_bytes(enhancer_to_bytes(model))


def load_enhancer(path: str | Path) -> EnhancerModel:
    return enhancer_from_bytes(Path(path).read_bytes())
