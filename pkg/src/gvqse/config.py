"""Run configuration: one YAML/JSON file, strict keys, validated before any work starts."""

from __future__ import annotations

import math
import os
import typing
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import yaml

from .degrade import TEST_SNR_GRID_DB, TRAIN_SNR_GRID_DB, DegradationSpec
from .errors import ConfigurationError, InvalidInputError

SEED_ENV = "PARAGSE_SEED"
TASKS = ("identity", "denoise", "dereverb", "bandlimit", "mixed", "custom")
NOISE_SOURCES = ("white", "pink", "babble")


@dataclass
class CodecParams:
    groups: int = 4
    codebook_size: int = 256
    latent_dim: int = 32
    half_window: int = 40
    frames_per_token: int = 8
    iterations: int = 50
    heldout_fraction: float = 0.1


@dataclass
class EnhancerParams:
    feature_dim: int = 64
    hidden: int = 128
    lr: float = 1e-2
    epochs: int = 50
    batch: int = 64
    context: bool = False


@dataclass
class CorpusParams:
    task: str = "denoise"
    split: str = "train"
    utterances: int = 20
    seconds: float = 2.0
    sample_rate: int = 16000
    snr_db: list[float] = field(default_factory=list)  # empty: the split's default grid
    noises: list[str] = field(default_factory=lambda: list(NOISE_SOURCES))
    rt60: list[float] = field(default_factory=lambda: [0.3, 0.5, 0.8])
    bandlimit_hz: int = 8000
    specs: list[str] = field(default_factory=list)  # used by task "custom"
    clean_dir: str = ""  # optional folder of user WAVs replacing the synthetic clean corpus


@dataclass
class PathParams:
    corpus: str = ""
    codec: str = ""
    enhancer: str = ""
    output: str = ""


@dataclass
class RunConfig:
    seed: typing.Optional[int] = None
    workers: int = 1
    codec: CodecParams = field(default_factory=CodecParams)
    enhancer: EnhancerParams = field(default_factory=EnhancerParams)
    corpus: CorpusParams = field(default_factory=CorpusParams)
    paths: PathParams = field(default_factory=PathParams)

    def to_dict(self) -> dict:
        return asdict(self)

    def snr_grid(self) -> list[float]:
        if self.corpus.snr_db:
            return list(self.corpus.snr_db)
        return list(TRAIN_SNR_GRID_DB if self.corpus.split == "train" else TEST_SNR_GRID_DB)


def _convert(value, tp, where: str):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        return None if value is None else _convert(value, args[0], where)
    if origin is list:
        if not isinstance(value, list):
            raise ConfigurationError(f"{where}: expected a list, got {type(value).__name__}")
        (item,) = typing.get_args(tp)
        return [_convert(v, item, f"{where}[{i}]") for i, v in enumerate(value)]
    if is_dataclass(tp):
        return _build(tp, value, where)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigurationError(f"{where}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, str):
            try:
                value = float(value)  # YAML 1.1 leaves "1e-3" (no dot) as a string
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigurationError(f"{where}: expected a finite number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigurationError(f"{where}: expected a string, got {value!r}")
        return value
    raise TypeError(f"unsupported config field type {tp!r}")


def _build(cls, data, where: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{where or 'config'}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigurationError(f"unknown config key(s) {', '.join((where + '.' if where else '') + k for k in unknown)}")
    kwargs = {k: _convert(v, hints[k], f"{where}.{k}" if where else k) for k, v in data.items()}
    return cls(**kwargs)


def rir_ids(rt60s: typing.Sequence[float]) -> list[str]:
    """Names the synthetic asset generator gives its RIRs."""
    return [f"rt{rt:g}" for rt in rt60s]


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigurationError(message)


def validate(cfg: RunConfig) -> RunConfig:
    """Check every constraint the downstream modules would otherwise hit mid-run."""
    c, e, p = cfg.codec, cfg.enhancer, cfg.corpus
    _require(cfg.seed is None or cfg.seed >= 0, "seed must be >= 0")
    _require(cfg.workers >= 1, "workers must be >= 1")
    _require(c.groups >= 1, "codec.groups must be >= 1")
    _require(c.codebook_size >= 1, "codec.codebook_size must be >= 1")
    _require(c.half_window >= 2, "codec.half_window must be >= 2")
    _require(c.frames_per_token >= 1, "codec.frames_per_token must be >= 1")
    d = c.half_window * c.frames_per_token
    _require(1 <= c.latent_dim <= d, f"codec.latent_dim must be in [1, {d}]")
    _require(c.latent_dim % c.groups == 0, f"codec.latent_dim {c.latent_dim} not divisible by codec.groups {c.groups}")
    _require(c.iterations >= 0, "codec.iterations must be >= 0")
    _require(0.0 <= c.heldout_fraction < 1.0, "codec.heldout_fraction must be in [0, 1)")
    _require(e.feature_dim >= 1 and e.hidden >= 1, "enhancer.feature_dim and enhancer.hidden must be >= 1")
    _require(e.lr > 0.0, "enhancer.lr must be > 0")
    _require(e.epochs >= 1 and e.batch >= 1, "enhancer.epochs and enhancer.batch must be >= 1")
    _require(p.task in TASKS, f"corpus.task must be one of {', '.join(TASKS)}")
    _require(p.split in ("train", "test"), "corpus.split must be 'train' or 'test'")
    _require(p.utterances >= 1, "corpus.utterances must be >= 1")
    _require(p.seconds > 0.0, "corpus.seconds must be > 0")
    _require(p.sample_rate > 0, "corpus.sample_rate must be > 0")
    _require(bool(p.noises), "corpus.noises must not be empty")
    for name in p.noises:
        _require(name in NOISE_SOURCES, f"unknown noise source {name!r}; available: {', '.join(NOISE_SOURCES)}")
    _require(bool(p.rt60) and all(r > 0 for r in p.rt60), "corpus.rt60 must be a non-empty list of positive times")
    _require(0 < p.bandlimit_hz < p.sample_rate, f"corpus.bandlimit_hz must be in (0, {p.sample_rate})")
    if p.task == "custom":
        _require(bool(p.specs), "corpus.specs is required for task 'custom'")
        for text in p.specs:
            try:
                spec = DegradationSpec.parse(text)
            except InvalidInputError as exc:
                raise ConfigurationError(f"corpus.specs: {exc}") from exc
            for stage in spec.stages:
                if hasattr(stage, "source_id"):
                    _require(stage.source_id in NOISE_SOURCES, f"corpus.specs: unknown noise source in {stage}")
                if hasattr(stage, "rir_id"):
                    _require(stage.rir_id in rir_ids(p.rt60), f"corpus.specs: unknown RIR in {stage}")
                if hasattr(stage, "target_hz"):
                    _require(0 < stage.target_hz < p.sample_rate, f"corpus.specs: {stage} exceeds the sample rate")
    if p.clean_dir:
        _require(Path(p.clean_dir).is_dir(), f"corpus.clean_dir {p.clean_dir!r} is not a directory")
    return cfg


def _parse_override(text: str) -> tuple[list[str], object]:
    if "=" not in text:
        raise ConfigurationError(f"override {text!r} is not of the form key.path=value")
    key, raw = text.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"override {text!r}: {exc}") from exc
    return key.strip().split("."), value


def load_config(path: str | Path | None = None, overrides: typing.Sequence[str] = ()) -> RunConfig:
    """Load YAML or JSON (JSON is valid YAML), apply ``key.path=value`` overrides, validate."""
    data: dict = {}
    if path:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"config {path} is not valid YAML/JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigurationError(f"config {path} must contain a mapping at the top level")
    for item in overrides:
        keys, value = _parse_override(item)
        node = data
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"override {item!r}: {k} is not a section")
        node[keys[-1]] = value
    return validate(_build(RunConfig, data, ""))


def resolve_seed(cfg: RunConfig) -> int:
    """Config seed, else $PARAGSE_SEED, else 0."""
    if cfg.seed is not None:
        return cfg.seed
    raw = os.environ.get(SEED_ENV, "").strip()
    if not raw:
        return 0
    try:
        seed = int(raw)
    except ValueError as exc:
        raise ConfigurationError(f"{SEED_ENV}={raw!r} is not an integer") from exc
    if seed < 0:
        raise ConfigurationError(f"{SEED_ENV} must be >= 0")
    return seed
