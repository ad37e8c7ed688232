"""Token codec: a linear MDCT analysis/synthesis model plus group and residual VQ.

The codec maps audio to one ``K``-dimensional latent per token frame of
``T = frames_per_token * W`` samples (8 MDCT frames of ``W = 40`` bins by
default, i.e. 320 samples at 16 kHz). Latents are quantized either by a
group quantizer (``N`` independent codebooks over contiguous ``K / N`` slices)
or by a residual quantizer (``N`` serial stages over the full ``K``).

Tokens are 1-based everywhere outside this module's private helpers.
"""

from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dsp import DEFAULT_HALF_WINDOW, AudioBuffer, MdctSpectrum, mdct_forward, mdct_inverse
from .errors import ConfigurationError, CorruptModelError, InsufficientDataError, InvalidInputError

FRAMES_PER_TOKEN = 8
DEFAULT_SAMPLE_RATE = 16000
MIN_FIT_SECONDS = 10.0
_CHUNK_ELEMS = 1 << 20  # bounds the temporary difference tensor


@dataclass(frozen=True)
class Codebook:
    entries: np.ndarray  # M x dim

    def __post_init__(self):
        e = np.array(self.entries, dtype=np.float64)
        if e.ndim != 2 or e.shape[0] < 1 or e.shape[1] < 1:
            raise InvalidInputError(f"codebook must be a non-empty M x dim matrix, got {e.shape}")
        if not np.all(np.isfinite(e)):
            raise InvalidInputError("codebook has non-finite entries")
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]


def _nearest(data: np.ndarray, entries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """0-based nearest codevector per row and the squared distance; ties go to the lowest index."""
    idx = np.empty(data.shape[0], dtype=np.int64)
    dist = np.empty(data.shape[0])
    step = max(1, _CHUNK_ELEMS // entries.size)
    for start in range(0, data.shape[0], step):
        block = data[start : start + step]
        d = ((block[:, None, :] - entries[None, :, :]) ** 2).sum(axis=2)
        i = np.argmin(d, axis=1)
        idx[start : start + step] = i
        dist[start : start + step] = d[np.arange(d.shape[0]), i]
    return idx, dist


def _check_tokens(tokens: np.ndarray, n: int, m: int) -> np.ndarray:
    t = np.asarray(tokens)
    if t.ndim == 1:
        t = t[None, :]
    if t.ndim != 2 or t.shape[1] != n:
        raise InvalidInputError(f"expected tokens with {n} columns, got shape {np.shape(tokens)}")
    if not np.issubdtype(t.dtype, np.integer):
        if not np.all(np.equal(np.mod(t, 1), 0)):
            raise InvalidInputError("tokens must be integers")
        t = t.astype(np.int64)
    if t.size and (t.min() < 1 or t.max() > m):
        raise InvalidInputError(f"token out of range [1, {m}]")
    return t.astype(np.int64)


class GvqQuantizer:
    """``N`` independent codebooks, one per contiguous ``K / N`` slice of the latent."""

    kind = "gvq"

    def __init__(self, codebooks: Sequence[Codebook]):
        if len(codebooks) < 1:
            raise InvalidInputError("need at least one codebook")
        sizes = {cb.size for cb in codebooks}
        dims = {cb.dim for cb in codebooks}
        if len(sizes) != 1 or len(dims) != 1:
            raise InvalidInputError("all group codebooks must share M and dim")
        self.codebooks = tuple(codebooks)

    @property
    def n_groups(self) -> int:
        return len(self.codebooks)

    @property
    def codebook_size(self) -> int:
        return self.codebooks[0].size

    @property
    def group_dim(self) -> int:
        return self.codebooks[0].dim

    @property
    def latent_dim(self) -> int:
        return self.n_groups * self.group_dim

    def split(self, latents: np.ndarray) -> list[np.ndarray]:
        g = self.group_dim
        return [latents[:, i * g : (i + 1) * g] for i in range(self.n_groups)]

    def quantize(self, latents: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Quantize a frames x K matrix; returns (1-based tokens frames x N, quantized latents)."""
        e = np.asarray(latents, dtype=np.float64)
        if e.ndim != 2 or e.shape[1] != self.latent_dim:
            raise InvalidInputError(f"latent dim must be {self.latent_dim}, got shape {e.shape}")
        tokens = np.empty((e.shape[0], self.n_groups), dtype=np.int64)
        parts = []
        for n, (block, cb) in enumerate(zip(self.split(e), self.codebooks)):
            idx, _ = _nearest(block, cb.entries)
            tokens[:, n] = idx + 1
            parts.append(cb.entries[idx])
        return tokens, np.concatenate(parts, axis=1)

    def quantize_group(self, n: int, block: np.ndarray) -> np.ndarray:
        idx, _ = _nearest(np.asarray(block, dtype=np.float64), self.codebooks[n].entries)
        return idx + 1

    def dequantize(self, tokens: np.ndarray) -> np.ndarray:
        t = _check_tokens(tokens, self.n_groups, self.codebook_size)
        return np.concatenate([cb.entries[t[:, n] - 1] for n, cb in enumerate(self.codebooks)], axis=1)


class RvqQuantizer:
    """``N`` serial stages; stage ``n`` quantizes what the earlier stages left over."""

    kind = "rvq"

    def __init__(self, codebooks: Sequence[Codebook]):
        if len(codebooks) < 1:
            raise InvalidInputError("need at least one stage")
        if len({cb.size for cb in codebooks}) != 1 or len({cb.dim for cb in codebooks}) != 1:
            raise InvalidInputError("all RVQ stages must share M and dim")
        self.codebooks = tuple(codebooks)

    @property
    def n_groups(self) -> int:
        return len(self.codebooks)

    @property
    def codebook_size(self) -> int:
        return self.codebooks[0].size

    @property
    def latent_dim(self) -> int:
        return self.codebooks[0].dim

    def quantize(self, latents: np.ndarray, return_residuals: bool = False):
        e = np.asarray(latents, dtype=np.float64)
        if e.ndim != 2 or e.shape[1] != self.latent_dim:
            raise InvalidInputError(f"latent dim must be {self.latent_dim}, got shape {e.shape}")
        tokens = np.empty((e.shape[0], self.n_groups), dtype=np.int64)
        residual = e.copy()
        quantized = np.zeros_like(e)
        residuals = [residual.copy()]
        for n, cb in enumerate(self.codebooks):
            idx, _ = _nearest(residual, cb.entries)
            tokens[:, n] = idx + 1
            quantized += cb.entries[idx]
            residual = e - quantized
            residuals.append(residual)
        if return_residuals:
            return tokens, quantized, residuals
        return tokens, quantized

    def dequantize(self, tokens: np.ndarray) -> np.ndarray:
        t = _check_tokens(tokens, self.n_groups, self.codebook_size)
        out = np.zeros((t.shape[0], self.latent_dim))
        for n, cb in enumerate(self.codebooks):
            out += cb.entries[t[:, n] - 1]
        return out


@dataclass(frozen=True)
class TokenSequence:
    tokens: np.ndarray  # frames x N, 1-based
    codebook_size: int
    n_samples: int | None = None

    def __post_init__(self):
        t = np.array(self.tokens, dtype=np.int64)
        if t.ndim != 2:
            raise InvalidInputError(f"tokens must be frames x N, got shape {t.shape}")
        if t.size and (t.min() < 1 or t.max() > self.codebook_size):
            raise InvalidInputError(f"token out of range [1, {self.codebook_size}]")
        t.setflags(write=False)
        object.__setattr__(self, "tokens", t)

    @property
    def n_frames(self) -> int:
        return self.tokens.shape[0]

    @property
    def n_groups(self) -> int:
        return self.tokens.shape[1]

    def to_text(self) -> str:
        return "".join(" ".join(str(int(v)) for v in row) + "\n" for row in self.tokens)

    @classmethod
    def from_text(cls, text: str, codebook_size: int) -> "TokenSequence":
        rows = [[int(v) for v in line.split()] for line in text.splitlines() if line.strip()]
        return cls(np.array(rows, dtype=np.int64), codebook_size)


@dataclass(frozen=True)
class LinearCodecModel:
    """Linear stand-in for a neural encoder/decoder pair.

    ``analysis`` (K x D) maps a stacked block of ``frames_per_token`` MDCT
    frames to a latent; ``synthesis`` (D x K) maps it back.
    """

    analysis: np.ndarray
    synthesis: np.ndarray
    half_window: int = DEFAULT_HALF_WINDOW
    frames_per_token: int = FRAMES_PER_TOKEN
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        a = np.array(self.analysis, dtype=np.float64)
        s = np.array(self.synthesis, dtype=np.float64)
        d = self.half_window * self.frames_per_token
        if a.ndim != 2 or a.shape[1] != d or s.shape != (d, a.shape[0]):
            raise InvalidInputError(f"analysis {a.shape} / synthesis {s.shape} do not match D = {d}")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(s))):
            raise InvalidInputError("codec matrices contain non-finite values")
        a.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "analysis", a)
        object.__setattr__(self, "synthesis", s)

    @property
    def latent_dim(self) -> int:
        return self.analysis.shape[0]

    @property
    def input_dim(self) -> int:
        return self.analysis.shape[1]

    @property
    def hop_samples(self) -> int:
        """Samples per token frame (T)."""
        return self.half_window * self.frames_per_token


def _padded(audio: AudioBuffer, hop: int) -> np.ndarray:
    n_frames = max(1, -(-len(audio) // hop))
    x = np.zeros(n_frames * hop)
    x[: len(audio)] = audio.samples
    return x


def stacked_mdct(audio: AudioBuffer, model: LinearCodecModel) -> np.ndarray:
    """MDCT of the audio (end-padded to whole token frames) as a frames x D matrix."""
    if audio.sample_rate != model.sample_rate:
        raise ConfigurationError(f"audio rate {audio.sample_rate} Hz != codec rate {model.sample_rate} Hz")
    x = _padded(audio, model.hop_samples)
    coeffs = mdct_forward(AudioBuffer(x, audio.sample_rate), model.half_window).coefficients
    return coeffs.reshape(-1, model.input_dim)


def encode(audio: AudioBuffer, model: LinearCodecModel) -> np.ndarray:
    """One K-dim latent per token frame (``ceil(len / T)`` rows)."""
    return stacked_mdct(audio, model) @ model.analysis.T


def decode(latents: np.ndarray, model: LinearCodecModel, n_samples: int | None = None) -> AudioBuffer:
    e = np.asarray(latents, dtype=np.float64)
    if e.ndim != 2 or e.shape[1] != model.latent_dim:
        raise InvalidInputError(f"latents must be frames x {model.latent_dim}, got shape {e.shape}")
    if e.shape[0] < 1:
        raise InvalidInputError("need at least one latent frame")
    coeffs = (e @ model.synthesis.T).reshape(-1, model.half_window)
    total = e.shape[0] * model.hop_samples
    spectrum = MdctSpectrum(coeffs, model.half_window, total, model.sample_rate)
    out = mdct_inverse(spectrum).samples
    if n_samples is not None:
        if not 0 < n_samples <= total:
            raise InvalidInputError(f"n_samples {n_samples} outside (0, {total}]")
        out = out[:n_samples]
    return AudioBuffer(out, model.sample_rate)


def fit_linear_codec(
    training_audio: Iterable[AudioBuffer],
    latent_dim: int = 32,
    half_window: int = DEFAULT_HALF_WINDOW,
    frames_per_token: int = FRAMES_PER_TOKEN,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
    min_seconds: float = MIN_FIT_SECONDS,
) -> LinearCodecModel:
    """Top-``latent_dim`` eigenvectors of the (uncentred) second-moment matrix of stacked MDCT frames.

    No mean is removed so that encode/decode stay strictly linear.
    """
    d = half_window * frames_per_token
    if not 1 <= latent_dim <= d:
        raise ConfigurationError(f"latent_dim must be in [1, {d}], got {latent_dim}")
    probe = LinearCodecModel(np.zeros((1, d)), np.zeros((d, 1)), half_window, frames_per_token, sample_rate)
    gram = np.zeros((d, d))
    seconds = 0.0
    for audio in training_audio:
        x = stacked_mdct(audio, probe)
        gram += x.T @ x
        seconds += audio.duration
    if seconds < min_seconds:
        raise InsufficientDataError(f"codec fit needs >= {min_seconds} s of audio, got {seconds:.2f} s")
    evals, evecs = np.linalg.eigh(gram)
    top = evecs[:, ::-1][:, :latent_dim]
    # deterministic sign: largest-magnitude component of each direction positive
    signs = np.sign(top[np.argmax(np.abs(top), axis=0), np.arange(latent_dim)])
    top = top * np.where(signs == 0, 1.0, signs)
    return LinearCodecModel(top.T.copy(), top.copy(), half_window, frames_per_token, sample_rate)


def vq_quantize(e_n: np.ndarray, codebook: Codebook) -> tuple[int, np.ndarray]:
    v = np.asarray(e_n, dtype=np.float64)
    if v.shape != (codebook.dim,):
        raise InvalidInputError(f"vector of shape {v.shape} vs codebook dim {codebook.dim}")
    idx, _ = _nearest(v[None, :], codebook.entries)
    return int(idx[0]) + 1, codebook.entries[idx[0]].copy()


def _as_vector(e: np.ndarray, k: int) -> np.ndarray:
    v = np.asarray(e, dtype=np.float64)
    if v.shape != (k,):
        raise InvalidInputError(f"expected a vector of length {k}, got shape {v.shape}")
    return v


def gvq_quantize(e: np.ndarray, q: GvqQuantizer) -> tuple[tuple[int, ...], np.ndarray]:
    tokens, quantized = q.quantize(_as_vector(e, q.latent_dim)[None, :])
    return tuple(int(t) for t in tokens[0]), quantized[0]


def gvq_dequantize(tokens: Sequence[int], q: GvqQuantizer) -> np.ndarray:
    t = np.asarray(tokens)
    if t.ndim != 1:
        raise InvalidInputError("expected one token per group")
    return q.dequantize(t[None, :])[0]


def rvq_quantize(e: np.ndarray, q: RvqQuantizer) -> tuple[tuple[int, ...], np.ndarray]:
    tokens, quantized = q.quantize(_as_vector(e, q.latent_dim)[None, :])
    return tuple(int(t) for t in tokens[0]), quantized[0]


def gvq_loss(inputs: Sequence[np.ndarray], outputs: Sequence[np.ndarray]) -> float:
    """Sum over groups of the batch-mean squared Euclidean error between VQ input and output.

    ``inputs[n]`` and ``outputs[n]`` are batch x dim arrays for group ``n``.
    """
    if len(inputs) != len(outputs) or len(inputs) == 0:
        raise InvalidInputError("inputs and outputs must list the same (non-zero) number of groups")
    total = 0.0
    for e_n, q_n in zip(inputs, outputs):
        e_n = np.atleast_2d(np.asarray(e_n, dtype=np.float64))
        q_n = np.atleast_2d(np.asarray(q_n, dtype=np.float64))
        if e_n.shape != q_n.shape:
            raise InvalidInputError(f"shape mismatch {e_n.shape} vs {q_n.shape}")
        total += float(np.mean(np.sum((q_n - e_n) ** 2, axis=1)))
    return total


# --- codebook training ---------------------------------------------------------------


@dataclass
class CodebookFit:
    codebook: Codebook
    mse_history: list[float] = field(default_factory=list)


def _kmeans_pp(data: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    centers = np.empty((m, data.shape[1]))
    centers[0] = data[rng.integers(data.shape[0])]
    closest = ((data - centers[0]) ** 2).sum(axis=1)
    for i in range(1, m):
        total = closest.sum()
        if total <= 0.0:
            raise InsufficientDataError(f"fewer than {m} distinct vectors")
        j = rng.choice(data.shape[0], p=closest / total)
        centers[i] = data[j]
        closest = np.minimum(closest, ((data - centers[i]) ** 2).sum(axis=1))
    return centers


def train_codebook(
    data: np.ndarray,
    codebook_size: int,
    seed: int = 0,
    iterations: int = 50,
    decay: float = 0.99,
    dead_after: int = 3,
) -> CodebookFit:
    """k-means++ initialisation followed by EMA centroid updates.

    Each update moves a centroid onto the segment between its old position and
    the mean of the vectors assigned to it, so the quantization MSE never
    increases. An entry left empty for ``dead_after`` consecutive iterations is
    re-seeded onto a data vector drawn with probability proportional to its
    current squared error.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < codebook_size:
        raise InsufficientDataError(f"need >= {codebook_size} training vectors, got {x.shape[0] if x.ndim == 2 else 0}")
    if np.unique(x, axis=0).shape[0] < codebook_size:
        raise InsufficientDataError(f"fewer than {codebook_size} distinct training vectors")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(x, codebook_size, rng)

    idx, dist = _nearest(x, centers)
    ema_count = np.bincount(idx, minlength=codebook_size).astype(np.float64)
    ema_sum = ema_count[:, None] * centers
    empty_streak = np.zeros(codebook_size, dtype=np.int64)
    history = [float(dist.mean())]
    for _ in range(iterations):
        counts = np.bincount(idx, minlength=codebook_size).astype(np.float64)
        sums = np.zeros_like(centers)
        np.add.at(sums, idx, x)
        ema_count = decay * ema_count + (1.0 - decay) * counts
        ema_sum = decay * ema_sum + (1.0 - decay) * sums
        live = ema_count > 0
        centers[live] = ema_sum[live] / ema_count[live, None]

        empty_streak = np.where(counts == 0, empty_streak + 1, 0)
        dead = np.flatnonzero(empty_streak >= dead_after)
        if dead.size and np.count_nonzero(dist) >= dead.size:
            picks = rng.choice(x.shape[0], size=dead.size, replace=False, p=dist / dist.sum())
            centers[dead] = x[picks]
            ema_count[dead] = 0.0
            ema_sum[dead] = 0.0
            empty_streak[dead] = 0

        idx, dist = _nearest(x, centers)
        history.append(float(dist.mean()))
    return CodebookFit(Codebook(centers), history)


def _child_seeds(seed: int, n: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def train_codebooks_gvq(
    latents: np.ndarray, n_groups: int = 4, codebook_size: int = 256, seed: int = 0, iterations: int = 50
) -> GvqQuantizer:
    e = np.asarray(latents, dtype=np.float64)
    if e.ndim != 2 or e.shape[1] % n_groups:
        raise ConfigurationError(f"latent dim {e.shape[-1]} not divisible by N = {n_groups}")
    g = e.shape[1] // n_groups
    books = [
        train_codebook(e[:, n * g : (n + 1) * g], codebook_size, s, iterations).codebook
        for n, s in enumerate(_child_seeds(seed, n_groups))
    ]
    return GvqQuantizer(books)


def train_codebooks_rvq(
    latents: np.ndarray, n_stages: int = 4, codebook_size: int = 256, seed: int = 0, iterations: int = 50
) -> RvqQuantizer:
    residual = np.asarray(latents, dtype=np.float64).copy()
    books = []
    for s in _child_seeds(seed, n_stages):
        cb = train_codebook(residual, codebook_size, s, iterations).codebook
        idx, _ = _nearest(residual, cb.entries)
        residual = residual - cb.entries[idx]
        books.append(cb)
    return RvqQuantizer(books)


def quantization_mse(latents: np.ndarray, quantizer) -> float:
    """Mean over frames of the squared latent error (equals gvq_loss summed over groups for GVQ)."""
    _, q = quantizer.quantize(latents)
    return float(np.mean(np.sum((q - latents) ** 2, axis=1)))


# --- frozen codec bundle -------------------------------------------------------------


@dataclass(frozen=True)
class Codec:
    """A fitted linear model together with its (frozen) quantizer."""

    model: LinearCodecModel
    quantizer: GvqQuantizer | RvqQuantizer

    def __post_init__(self):
        if self.quantizer.latent_dim != self.model.latent_dim:
            raise ConfigurationError(
                f"quantizer latent dim {self.quantizer.latent_dim} != codec K {self.model.latent_dim}"
            )

    @property
    def n_groups(self) -> int:
        return self.quantizer.n_groups

    @property
    def codebook_size(self) -> int:
        return self.quantizer.codebook_size

    def tokenize(self, audio: AudioBuffer) -> TokenSequence:
        return tokenize(audio, self.model, self.quantizer)

    def detokenize(self, tokens: TokenSequence) -> AudioBuffer:
        return detokenize(tokens, self.model, self.quantizer)

    def to_bytes(self) -> bytes:
        return codec_to_bytes(self)

    def checksum(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def tokenize(audio: AudioBuffer, model: LinearCodecModel, quantizer) -> TokenSequence:
    tokens, _ = quantizer.quantize(encode(audio, model))
    return TokenSequence(tokens, quantizer.codebook_size, len(audio))


def detokenize(tokens: TokenSequence, model: LinearCodecModel, quantizer) -> AudioBuffer:
    return decode(quantizer.dequantize(tokens.tokens), model, tokens.n_samples)


# Binary container, little-endian:
#   b"GVQC", u32 version, u32 kind (0 = gvq, 1 = rvq), u32 N, M, K, W, T, sample_rate,
#   then float64 row-major: analysis (K x D), synthesis (D x K), N codebooks (M x dim each).
CODEC_MAGIC = b"GVQC"
CODEC_VERSION = 1
_CODEC_HEADER = struct.Struct("<4s8I")
_KINDS = {"gvq": 0, "rvq": 1}


def codec_to_bytes(codec: Codec) -> bytes:
    m = codec.model
    q = codec.quantizer
    buf = io.BytesIO()
    buf.write(
        _CODEC_HEADER.pack(
            CODEC_MAGIC,
            CODEC_VERSION,
            _KINDS[q.kind],
            q.n_groups,
            q.codebook_size,
            m.latent_dim,
            m.half_window,
            m.hop_samples,
            m.sample_rate,
        )
    )
    for arr in (m.analysis, m.synthesis, *[cb.entries for cb in q.codebooks]):
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def _read_matrix(data: bytes, offset: int, rows: int, cols: int) -> tuple[np.ndarray, int]:
    size = rows * cols * 8
    if offset + size > len(data):
        raise CorruptModelError("codec container truncated")
    arr = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=offset).reshape(rows, cols)
    return arr.astype(np.float64), offset + size


def codec_from_bytes(data: bytes, offset: int = 0) -> tuple[Codec, int]:
    """Parse a codec container starting at ``offset``; returns the codec and the end offset."""
    if len(data) - offset < _CODEC_HEADER.size:
        raise CorruptModelError("codec container too short")
    magic, version, kind, n, m, k, w, t, rate = _CODEC_HEADER.unpack_from(data, offset)
    if magic != CODEC_MAGIC:
        raise CorruptModelError(f"bad codec magic {magic!r}")
    if version != CODEC_VERSION:
        raise CorruptModelError(f"unsupported codec format version {version}")
    if kind not in (0, 1) or n < 1 or m < 1 or k < 1 or w < 2 or t % w:
        raise CorruptModelError("codec header fields out of range")
    if kind == 0 and k % n:
        raise CorruptModelError(f"K = {k} not divisible by N = {n}")
    d = t
    pos = offset + _CODEC_HEADER.size
    try:
        analysis, pos = _read_matrix(data, pos, k, d)
        synthesis, pos = _read_matrix(data, pos, d, k)
        dim = k // n if kind == 0 else k
        books = []
        for _ in range(n):
            entries, pos = _read_matrix(data, pos, m, dim)
            books.append(Codebook(entries))
        model = LinearCodecModel(analysis, synthesis, w, t // w, rate)
        quantizer = GvqQuantizer(books) if kind == 0 else RvqQuantizer(books)
        return Codec(model, quantizer), pos
    except (InvalidInputError, ConfigurationError) as exc:
        raise CorruptModelError(f"invalid codec container: {exc}") from exc


def save_codec(path: str | Path, codec: Codec) -> None:
    Path(path).write_bytes(codec_to_bytes(codec))


def load_codec(path: str | Path) -> Codec:
    data = Path(path).read_bytes()
    codec, end = codec_from_bytes(data)
    if end != len(data):
        raise CorruptModelError(f"{len(data) - end} trailing bytes after codec container")
    return codec
