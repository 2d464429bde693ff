"""Command-line entry point: ``python -m sawsynth <verb> ...``.

Failures print a single ``error: CODE: message`` line to stderr and exit
with a nonzero status.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from .audio_io import WavError, load_wav, save_wav
from .checkpoint import CheckpointError
from .dataset import generate_synthetic_singer, load_sidecar, make_excerpts, params_from_sidecar
from .network import ConformerLiteConfig, param_count
from .pipeline import MelFormatError, compare, evaluate, mel_to_audio, read_melx, resynthesize, write_melx
from .pitch import extract_pitch
from .signal_core import AudioBuffer, mel_spectrogram
from .synth import SynthConfig, sawsing_forward, vuv_postprocess
from .training import RunConfig, TrainingDiverged, load_model, train

EXIT_CODES = {
    "E_USAGE": 2,
    "E_IO": 3,
    "E_FORMAT": 4,
    "E_CONFIG": 5,
    "E_DIVERGED": 6,
    "E_INTERNAL": 70,
}


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def _json_dump(obj, path=None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path:
        Path(path).write_text(text + "\n")
    else:
        print(text)


def _load_run(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        return RunConfig.load(path)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError("E_IO", f"cannot read config {path}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise CliError("E_CONFIG", f"invalid config {path}: {exc}") from exc


def _model(path):
    try:
        return load_model(path)
    except FileNotFoundError as exc:
        raise CliError("E_IO", f"checkpoint not found: {path}") from exc
    except CheckpointError as exc:
        raise CliError("E_FORMAT", f"{path}: {exc}") from exc


def _read_wav(path) -> AudioBuffer:
    try:
        return load_wav(path)
    except FileNotFoundError as exc:
        raise CliError("E_IO", f"input not found: {path}") from exc
    except WavError as exc:
        raise CliError("E_FORMAT", str(exc)) from exc


# ---------------------------------------------------------------------------
# verbs
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> None:
    paths = generate_synthetic_singer(args.seed, args.minutes, args.out)
    print(f"wrote {len(paths)} files to {args.out}")


def cmd_analyze(args) -> None:
    run = _load_run(args.config)
    audio = _read_wav(args.wav)
    if audio.sample_rate != run.analysis.sample_rate:
        raise CliError("E_CONFIG", f"sample-rate mismatch: {audio.sample_rate} Hz input, config expects {run.analysis.sample_rate} Hz")
    mel = mel_spectrogram(audio, run.analysis)
    write_melx(args.out, mel)
    print(f"{mel.mel_bands}x{mel.frames} mel frames -> {args.out}")


def cmd_train(args) -> None:
    run = _load_run(args.config)
    if args.seed is not None:
        run = run.with_(seed=args.seed)
    if args.max_steps is not None and args.max_steps < 0:
        raise CliError("E_USAGE", "--max-steps must be >= 0")
    try:
        result = train(
            run,
            args.data,
            args.out,
            max_steps=args.max_steps,
            max_hours=args.max_hours,
            progress=(lambda row: print(json.dumps(row), flush=True)) if args.verbose else None,
        )
    except TrainingDiverged as exc:
        raise CliError("E_DIVERGED", f"{exc}; last good weights kept in {Path(args.out) / 'latest.ckpt'}") from exc
    except FileNotFoundError as exc:
        raise CliError("E_IO", str(exc)) from exc
    print(
        f"steps={result.steps} initial_val={result.initial_val:.4f} "
        f"best_val={result.best_val:.4f} wall_s={result.wall_s:.1f}"
    )


def cmd_resynth(args) -> None:
    run, weights = _model(args.checkpoint)
    audio = _read_wav(args.wav_in)
    if audio.sample_rate != run.analysis.sample_rate:
        raise CliError("E_CONFIG", f"sample-rate mismatch: {audio.sample_rate} Hz input, model expects {run.analysis.sample_rate} Hz")
    if args.oracle:
        sidecar = load_sidecar(args.oracle)
        if SynthConfig(**sidecar["synth"]) != run.synth:
            raise CliError("E_CONFIG", "oracle sidecar was rendered with a different synthesizer config")
        params = params_from_sidecar(sidecar)
        y, y_h, y_n = sawsing_forward(params, run.synth, sidecar["noise_seed"])
        if args.vuv_postprocess:
            y = vuv_postprocess(y_h, extract_pitch(audio, hop=run.analysis.hop).voiced, run.synth.hop) + y_n
        out = AudioBuffer(y, audio.sample_rate)
        spectral, mae, voiced = compare(audio, out, run.analysis.hop)
    else:
        res = resynthesize(audio, run, weights, np.random.default_rng(args.seed), vuv=args.vuv_postprocess)
        out, spectral, mae, voiced = res.audio, res.msstft, res.mae_f0_cents, res.voiced_frames
    save_wav(args.wav_out, out)
    metrics = {"msstft": spectral, "mae_f0_cents": mae, "voiced_frames": voiced, "oracle": bool(args.oracle),
               "vuv_postprocess": bool(args.vuv_postprocess)}
    _json_dump(metrics, args.metrics)


def cmd_synth(args) -> None:
    run, weights = _model(args.checkpoint)
    try:
        mel = read_melx(args.mel, run.analysis)
    except FileNotFoundError as exc:
        raise CliError("E_IO", f"input not found: {args.mel}") from exc
    except MelFormatError as exc:
        raise CliError("E_FORMAT", f"{args.mel}: {exc}") from exc
    y, _ = mel_to_audio(mel, run, weights, np.random.default_rng(args.seed))
    save_wav(args.wav_out, AudioBuffer(y, run.synth.sample_rate))
    print(f"{len(y)} samples -> {args.wav_out}")


def cmd_eval(args) -> None:
    run, weights = _model(args.checkpoint)
    try:
        train_set, val_set = make_excerpts(args.data, run.analysis, run.split)
    except FileNotFoundError as exc:
        raise CliError("E_IO", str(exc)) from exc
    excerpts = train_set if args.split == "train" else val_set
    if not excerpts:
        raise CliError("E_CONFIG", f"the {args.split} split of {args.data} is empty")
    report = evaluate(run, weights, excerpts, seed=args.seed, timing=not args.no_timing)
    report["split"] = args.split
    _json_dump(report, args.out)


def cmd_param_count(args) -> None:
    if args.config:
        model = _load_run(args.config).model
    else:
        model = ConformerLiteConfig(backend=args.backend)
    if args.model_dim:
        model = model.with_(model_dim=args.model_dim)
    print(json.dumps({"backend": model.backend, "model_dim": model.model_dim, "param_count": param_count(model)}))


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("E_USAGE", message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sawsynth", description="Sawtooth-source singing vocoder.")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="render a synthetic singer dataset")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--minutes", type=float, default=3.3)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    a = sub.add_parser("analyze", help="WAV to MELX mel file")
    a.add_argument("wav")
    a.add_argument("out")
    a.add_argument("--config", help="run config JSON (default analysis settings otherwise)")
    a.set_defaults(func=cmd_analyze)

    t = sub.add_parser("train", help="train an estimator")
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--max-steps", type=int)
    t.add_argument("--max-hours", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--verbose", action="store_true")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("resynth", help="WAV to WAV through a trained model")
    r.add_argument("checkpoint")
    r.add_argument("wav_in")
    r.add_argument("wav_out")
    r.add_argument("--vuv-postprocess", action="store_true")
    r.add_argument("--oracle", metavar="SIDECAR", help="render ground-truth controls instead of estimates")
    r.add_argument("--metrics", help="write metrics JSON here instead of stdout")
    r.add_argument("--seed", type=int, default=0)
    r.set_defaults(func=cmd_resynth)

    s = sub.add_parser("synth", help="MELX mel file to WAV")
    s.add_argument("checkpoint")
    s.add_argument("mel")
    s.add_argument("wav_out")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("eval", help="JSON metrics report")
    e.add_argument("checkpoint")
    e.add_argument("data")
    e.add_argument("--split", choices=("validation", "train"), default="validation")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out")
    e.add_argument("--no-timing", action="store_true", help="omit the (non-deterministic) RTF measurement")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("param-count", help="trainable parameter count")
    c.add_argument("--backend", choices=("sawsing", "ddsp-add"), default="sawsing")
    c.add_argument("--config")
    c.add_argument("--model-dim", type=int)
    c.set_defaults(func=cmd_param_count)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            args.func(args)
    except CliError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return EXIT_CODES[exc.code]
    except (OSError, ValueError) as exc:
        code = "E_IO" if isinstance(exc, OSError) else "E_CONFIG"
        print(f"error: {code}: {exc}".replace("\n", " "), file=sys.stderr)
        return EXIT_CODES[code]
    return 0


if __name__ == "__main__":
    sys.exit(main())
