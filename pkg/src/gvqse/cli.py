"""Command-line entry point: corpus generation, codec/enhancer training, enhancement, evaluation, benchmarking.

Exit codes: 0 success, 2 configuration error, 3 data error (bad or missing
input, insufficient data, corrupt model, I/O failure), 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import statistics
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .codec import (
    Codec,
    encode,
    fit_linear_codec,
    load_codec,
    quantization_mse,
    train_codebooks_gvq,
    train_codebooks_rvq,
)
from .config import RunConfig, load_config, resolve_seed, rir_ids
from .degrade import DegradationSpec, add_noise, apply_spec, speech_like, synth_assets
from .dsp import AudioBuffer
from .enhance import (
    EnhancerConfig,
    EnhancerModel,
    enhance_parallel,
    enhance_serial,
    enhancer_to_bytes,
    load_enhancer,
    predict_tokens,
    train_enhancer,
)
from .errors import ConfigurationError, DegenerateInputError, GvqseError, InvalidInputError
from .metrics import bench_rtf, lsd, measure_snr, token_accuracy, write_table
from .wavio import read_wav, write_wav

log = logging.getLogger("gvqse")

MANIFEST_NAME = "manifest.jsonl"
PEAK_LIMIT = 0.99  # pairs are jointly rescaled below this so 16-bit PCM never clips


# --- helpers -------------------------------------------------------------------------


def _atomic_write(path: str | Path, data: bytes | str) -> None:
    """Write via a temporary sibling and rename, so a failed run leaves no partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode() if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _child_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    clean: Path
    degraded: Path
    spec: str
    seed: int


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise InvalidInputError(f"cannot read manifest {path}: {exc}") from exc
    entries = []
    for no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            entries.append(
                ManifestEntry(
                    str(rec["id"]),
                    path.parent / rec["clean"],
                    path.parent / rec["degraded"],
                    str(rec["spec"]),
                    int(rec["seed"]),
                )
            )
        except (ValueError, KeyError, TypeError) as exc:
            raise InvalidInputError(f"{path}:{no}: malformed manifest line ({exc})") from exc
    if not entries:
        raise InvalidInputError(f"manifest {path} lists no pairs")
    return entries


def task_specs(cfg: RunConfig, n: int) -> list[str]:
    """Degradation spec text for each of ``n`` utterances, cycling deterministically over the grids."""
    p = cfg.corpus
    grid = cfg.snr_grid()
    rirs = rir_ids(p.rt60)
    out = []
    for i in range(n):
        noise = f"noise({p.noises[(i // len(grid)) % len(p.noises)]},{grid[i % len(grid)]:g})"
        reverb = f"reverb({rirs[i % len(rirs)]})"
        band = f"bandlimit({p.bandlimit_hz})"
        out.append(
            {
                "identity": "clean",
                "denoise": noise,
                "dereverb": reverb,
                "bandlimit": band,
                "mixed": f"{reverb}>{noise}>{band}",
                "custom": p.specs[i % len(p.specs)] if p.specs else "clean",
            }[p.task]
        )
    return out


def _clean_corpus(cfg: RunConfig, seed: int) -> tuple[list[AudioBuffer], object]:
    p = cfg.corpus
    assets = synth_assets(
        seed,
        p.sample_rate,
        n_clean=0 if p.clean_dir else p.utterances,
        clean_seconds=p.seconds,
        rt60s=tuple(p.rt60),
    )
    if not p.clean_dir:
        return assets.clean, assets
    files = sorted(Path(p.clean_dir).glob("*.wav"))[: p.utterances]
    if not files:
        raise InvalidInputError(f"no .wav files in {p.clean_dir}")
    clean = []
    for f in files:
        a = read_wav(f)
        if a.sample_rate != p.sample_rate:
            raise InvalidInputError(f"{f}: {a.sample_rate} Hz, corpus expects {p.sample_rate} Hz")
        clean.append(a)
    return clean, assets


def _audio_pair(entry: ManifestEntry) -> tuple[AudioBuffer, AudioBuffer]:
    """(degraded, clean) read from disk."""
    return read_wav(entry.degraded), read_wav(entry.clean)


# --- commands ------------------------------------------------------------------------


def cmd_make_corpus(cfg: RunConfig, out_dir: str | Path) -> Path:
    """Write clean/degraded WAV pairs and a JSON-lines manifest; returns the manifest path."""
    seed = resolve_seed(cfg)
    out_dir = Path(out_dir)
    clean, assets = _clean_corpus(cfg, seed)
    specs = task_specs(cfg, len(clean))
    records = []
    for i, (x, text) in enumerate(zip(clean, specs)):
        spec = DegradationSpec.parse(text, _child_seed(seed, i))
        y, _ = apply_spec(x, spec, assets)
        peak = max(np.max(np.abs(y.samples)), np.max(np.abs(x.samples)))
        if peak > PEAK_LIMIT:
            g = PEAK_LIMIT / peak
            x, y = AudioBuffer(x.samples * g, x.sample_rate), AudioBuffer(y.samples * g, y.sample_rate)
        uid = f"utt{i:04d}"
        clean_rel, deg_rel = f"clean/{uid}.wav", f"degraded/{uid}.wav"
        for rel, audio in ((clean_rel, x), (deg_rel, y)):
            (out_dir / rel).parent.mkdir(parents=True, exist_ok=True)
            write_wav(out_dir / rel, audio)
        records.append({"id": uid, "clean": clean_rel, "degraded": deg_rel, "spec": str(spec), "seed": spec.seed})
    manifest = out_dir / MANIFEST_NAME
    _atomic_write(manifest, "".join(json.dumps(r, sort_keys=True) + "\n" for r in records))
    log.info("wrote %d pairs to %s", len(records), out_dir)
    return manifest


def cmd_train_codec(
    cfg: RunConfig, manifest: str | Path, out: str | Path, serial_out: str | Path | None = None
) -> dict[str, float]:
    """Fit the linear codec on the clean side of the corpus, then train GVQ (and optionally RVQ) codebooks."""
    seed = resolve_seed(cfg)
    c = cfg.codec
    entries = read_manifest(manifest)
    clean_paths = list(dict.fromkeys(e.clean for e in entries))
    audio = [read_wav(p) for p in clean_paths]
    n_held = int(math.floor(len(audio) * c.heldout_fraction))
    train, held = audio[: len(audio) - n_held], audio[len(audio) - n_held :]
    model = fit_linear_codec(
        train, c.latent_dim, c.half_window, c.frames_per_token, sample_rate=train[0].sample_rate
    )
    lat_train = np.concatenate([encode(a, model) for a in train])
    lat_held = np.concatenate([encode(a, model) for a in held]) if held else None
    report: dict[str, float] = {"latent_power": float(np.mean(np.sum(lat_train**2, axis=1)))}
    jobs = [("gvq", out)] + ([("rvq", serial_out)] if serial_out else [])
    for kind, path in jobs:
        if kind == "gvq":
            q = train_codebooks_gvq(lat_train, c.groups, c.codebook_size, seed, c.iterations)
        else:
            q = train_codebooks_rvq(lat_train, c.groups, c.codebook_size, seed, c.iterations)
        codec = Codec(model, q)
        report[f"{kind}_train_mse"] = quantization_mse(lat_train, q)
        if lat_held is not None:
            report[f"{kind}_heldout_mse"] = quantization_mse(lat_held, q)
        _atomic_write(path, codec.to_bytes())
        log.info("wrote %s codec to %s (sha256 %s)", kind, path, codec.checksum())
    return report


def cmd_train_enhancer(cfg: RunConfig, manifest: str | Path, codec_path: str | Path, out: str | Path):
    """Train an enhancer over a frozen codec; residual-VQ codecs give the serial baseline."""
    seed = resolve_seed(cfg)
    codec = load_codec(codec_path)
    e = cfg.enhancer
    config = EnhancerConfig(
        feature_dim=e.feature_dim,
        hidden=e.hidden,
        lr=e.lr,
        epochs=e.epochs,
        batch=e.batch,
        seed=seed,
        context=e.context,
    )
    pairs = [_audio_pair(entry) for entry in read_manifest(manifest)]
    model, report = train_enhancer(pairs, codec, config, serial=codec.quantizer.kind == "rvq", log=log.info)
    _atomic_write(out, enhancer_to_bytes(model))
    return model, report


def _load_models(enhancer_path: str | Path, codec_path: str | Path | None) -> EnhancerModel:
    model = load_enhancer(enhancer_path)
    if codec_path is not None and load_codec(codec_path).checksum() != model.codec.checksum():
        raise ConfigurationError(f"codec {codec_path} is not the codec the enhancer was trained with")
    return model


def cmd_enhance(
    enhancer_path: str | Path,
    input_path: str | Path,
    output_path: str | Path,
    workers: int = 1,
    mode: str | None = None,
    codec_path: str | Path | None = None,
    dump_tokens: str | Path | None = None,
) -> AudioBuffer:
    model = _load_models(enhancer_path, codec_path)
    expected = "serial" if model.serial else "parallel"
    if mode is not None and mode != expected:
        raise ConfigurationError(f"--mode {mode} does not match the {expected} enhancer in {enhancer_path}")
    y = read_wav(input_path)
    tokens, _ = predict_tokens(model, y, workers)
    out = model.codec.detokenize(tokens)
    _atomic_write_wav(output_path, out)
    if dump_tokens:
        _atomic_write(dump_tokens, tokens.to_text())
    return out


def _atomic_write_wav(path: str | Path, audio: AudioBuffer) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    try:
        write_wav(tmp, audio)
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def _safe_snr(clean: AudioBuffer, test: AudioBuffer) -> float:
    try:
        return float(measure_snr(clean, test))
    except DegenerateInputError:
        return math.inf


EVAL_COLUMNS = ("id", "spec", "lsd_degraded", "lsd_enhanced", "snr_degraded", "snr_enhanced", "token_accuracy")


def cmd_eval(
    manifest: str | Path,
    out_dir: str | Path,
    enhancer_path: str | Path | None = None,
    workers: int = 1,
    codec_path: str | Path | None = None,
) -> dict:
    """Per-utterance and aggregate LSD/SNR/token accuracy, degraded vs enhanced.

    Entries whose files cannot be read are listed as failures; the rest still run.
    """
    entries = read_manifest(manifest)
    model = _load_models(enhancer_path, codec_path) if enhancer_path else None
    rows, failures = [], []
    for entry in entries:
        try:
            y, x = _audio_pair(entry)
        except (OSError, GvqseError) as exc:
            failures.append(f"{entry.id}: {exc}")
            continue
        row = {"id": entry.id, "spec": entry.spec, "lsd_degraded": lsd(x, y), "snr_degraded": _safe_snr(x, y)}
        if model is not None:
            pred, _ = predict_tokens(model, y, workers)
            enhanced = model.codec.detokenize(pred)
            row["lsd_enhanced"] = lsd(x, enhanced)
            row["snr_enhanced"] = _safe_snr(x, enhanced)
            acc = token_accuracy(pred, model.codec.tokenize(x))
            row["token_accuracy"] = acc.overall
            for n, a in enumerate(acc.per_branch, start=1):
                row[f"acc{n}"] = a
        rows.append(row)
    columns = [c for c in EVAL_COLUMNS if any(c in r for r in rows)]
    columns += sorted({k for r in rows for k in r if k.startswith("acc")}, key=lambda k: int(k[3:]))
    summary: dict = {"utterances": len(rows), "failures": len(failures)}
    for col in columns[2:]:
        summary[f"mean_{col}"] = statistics.fmean(r[col] for r in rows) if rows else math.nan
    out_dir = Path(out_dir)
    write_table_path = out_dir / "eval.tsv"
    out_dir.mkdir(parents=True, exist_ok=True)
    write_table(write_table_path, [{c: r.get(c, "") for c in columns} for r in rows])
    text = "".join(f"{k}={v}\n" for k, v in summary.items()) + "".join(f"failed={f}\n" for f in failures)
    _atomic_write(out_dir / "summary.txt", text)
    summary["failed"] = failures
    summary["rows"] = rows
    return summary


def bench_audio(seconds: float, seed: int, sample_rate: int = 16000) -> AudioBuffer:
    """Speech-like signal in white noise at 10 dB, used as the benchmark input."""
    rng = np.random.default_rng(seed)
    x = AudioBuffer(speech_like(rng, seconds, sample_rate), sample_rate)
    noise = AudioBuffer(rng.standard_normal(len(x)), sample_rate)
    return add_noise(x, noise, 10.0, rng)


def cmd_bench(
    enhancer_path: str | Path,
    serial_path: str | Path | None = None,
    duration: float = 60.0,
    workers_list: Sequence[int] = (1, 4),
    repeats: int = 3,
    seed: int = 0,
    table_path: str | Path | None = None,
) -> tuple[list[dict], dict[str, float]]:
    """RTF of the parallel pipeline at each worker count and of the serial pipeline on the same audio."""
    parallel = load_enhancer(enhancer_path)
    if parallel.serial:
        raise ConfigurationError(f"{enhancer_path} holds a serial model; pass it as the serial enhancer")
    serial = load_enhancer(serial_path) if serial_path else None
    if serial is not None and not serial.serial:
        raise ConfigurationError(f"{serial_path} does not hold a serial model")
    if any(w < 1 for w in workers_list):
        raise ConfigurationError("worker counts must be >= 1")
    audio = bench_audio(duration, seed, parallel.codec.model.sample_rate)
    reports = []
    for w in workers_list:
        reports.append(
            bench_rtf(lambda a, w=w: enhance_parallel(a, parallel, w), audio, w, repeats, name="parallel")
        )
    if serial is not None:
        reports.append(bench_rtf(lambda a: enhance_serial(a, serial), audio, 1, repeats, name="serial"))
    rows = [
        {
            "pipeline": r.pipeline,
            "workers": r.workers,
            "wall_seconds": f"{r.wall_seconds:.6f}",
            "audio_seconds": f"{r.audio_seconds:.3f}",
            "rtf": f"{r.rtf:.6f}",
            "speedup_vs_realtime": f"{r.speedup_vs_realtime:.3f}",
            "spread": f"{r.spread:.4f}",
            "hardware": r.hardware,
        }
        for r in reports
    ]
    ratios = {}
    if serial is not None:
        ser = reports[-1].wall_seconds
        for r in reports[:-1]:
            ratios[f"serial_over_parallel_w{r.workers}"] = ser / r.wall_seconds
    if table_path:
        Path(table_path).parent.mkdir(parents=True, exist_ok=True)
        write_table(table_path, rows)
    return rows, ratios


# --- argument parsing ----------------------------------------------------------------


def _workers_list(text: str) -> list[int]:
    try:
        out = [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad worker list {text!r}") from exc
    if not out:
        raise argparse.ArgumentTypeError("empty worker list")
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML or JSON run configuration")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key, e.g. codec.codebook_size=16")
    common.add_argument("--seed", type=int, help="global seed (falls back to the config, then $PARAGSE_SEED, then 0)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="gvqse", description="Group-VQ token speech enhancement toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-corpus", parents=[common], help="generate degraded/clean WAV pairs and a manifest")
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = sub.add_parser("train-codec", parents=[common], help="fit the linear codec and its codebooks")
    p.add_argument("--corpus", type=Path, required=True, help="manifest file")
    p.add_argument("--out", type=Path, required=True, help="group-VQ codec file")
    p.add_argument("--serial-out", type=Path, help="also train a residual-VQ codec and write it here")

    p = sub.add_parser("train-enhancer", parents=[common], help="train token prediction branches")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--codec", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="enhancer file (codec container + enhancer)")
    p.add_argument("--report", type=Path, help="write the training report here as well")

    p = sub.add_parser("enhance", parents=[common], help="enhance one WAV file")
    p.add_argument("input", type=Path)
    p.add_argument("output", type=Path)
    p.add_argument("--enhancer", type=Path, required=True)
    p.add_argument("--codec", type=Path, help="check the enhancer was trained with this codec")
    p.add_argument("--workers", type=int)
    p.add_argument("--mode", choices=("parallel", "serial"))
    p.add_argument("--dump-tokens", type=Path, help="write predicted tokens, one frame per line")

    p = sub.add_parser("eval", parents=[common], help="score a corpus: degraded vs enhanced")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--enhancer", type=Path)
    p.add_argument("--codec", type=Path)
    p.add_argument("--out", type=Path, required=True, help="report directory")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("bench", parents=[common], help="real-time factor of parallel and serial pipelines")
    p.add_argument("--enhancer", type=Path, required=True, help="parallel (group-VQ) enhancer")
    p.add_argument("--serial-enhancer", type=Path, help="serial (residual-VQ) enhancer")
    p.add_argument("--duration", type=float, default=60.0, help="seconds of audio")
    p.add_argument("--workers-list", type=_workers_list, default=[1, 4])
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--table", type=Path, help="tab-separated output table")
    return parser


def _run(args: argparse.Namespace) -> int:
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "workers", None) is not None:
        overrides.append(f"workers={args.workers}")
    cfg = load_config(args.config, overrides)
    seed = resolve_seed(cfg)

    if args.command == "make-corpus":
        print(cmd_make_corpus(cfg, args.out))
    elif args.command == "train-codec":
        report = cmd_train_codec(cfg, args.corpus, args.out, args.serial_out)
        print("".join(f"{k}={v:.6g}\n" for k, v in report.items()), end="")
    elif args.command == "train-enhancer":
        _, report = cmd_train_enhancer(cfg, args.corpus, args.codec, args.out)
        text = report.to_text()
        if args.report:
            _atomic_write(args.report, text)
        print(text, end="")
    elif args.command == "enhance":
        cmd_enhance(args.enhancer, args.input, args.output, cfg.workers, args.mode, args.codec, args.dump_tokens)
    elif args.command == "eval":
        summary = cmd_eval(args.corpus, args.out, args.enhancer, cfg.workers, args.codec)
        print((Path(args.out) / "summary.txt").read_text(), end="")
        if summary["failures"]:
            return 3
    elif args.command == "bench":
        rows, ratios = cmd_bench(
            args.enhancer, args.serial_enhancer, args.duration, args.workers_list, args.repeats, seed, args.table
        )
        cols = list(rows[0])
        print("\t".join(cols))
        for r in rows:
            print("\t".join(str(r[c]) for c in cols))
        for k, v in ratios.items():
            print(f"{k}={v:.4f}")
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        # single-threaded BLAS keeps every reduction order, hence every output byte, reproducible
        with threadpool_limits(limits=1, user_api="blas"):
            return _run(args)
    except GvqseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
