"""Inference: mel files, resynthesis and evaluation reports."""

from __future__ import annotations

import os
import struct
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Excerpt
from .losses import mae_f0_cents, msstft_loss
from .network import estimate_params, param_count
from .pitch import extract_pitch
from .signal_core import AnalysisConfig, AudioBuffer, MelSpectrogram, mel_spectrogram
from .synth import vuv_postprocess
from .training import RunConfig, synthesize

__all__ = [
    "MELX_MAGIC",
    "MelFormatError",
    "write_melx",
    "read_melx",
    "mel_to_audio",
    "ResynthResult",
    "compare",
    "resynthesize",
    "evaluate",
]

MELX_MAGIC = b"MELX"
MELX_VERSION = 1
_MELX_HEADER = struct.Struct("<4sIII32s")


class MelFormatError(ValueError):
    pass


def write_melx(path, mel: MelSpectrogram) -> None:
    """``MELX | u32 version | u32 M | u32 N | sha256(config) | float32 LE (M, N)``."""
    values = np.asarray(mel.values, dtype="<f4")
    m, n = values.shape
    header = _MELX_HEADER.pack(MELX_MAGIC, MELX_VERSION, m, n, bytes.fromhex(mel.config.digest()))
    path = Path(path)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    tmp.write_bytes(header + np.ascontiguousarray(values).tobytes())
    os.replace(tmp, path)


def read_melx(path, config: AnalysisConfig) -> MelSpectrogram:
    """Read a mel file written for ``config``.

    Raises
    ------
    MelFormatError
        On a bad magic, version or size, or a configuration hash mismatch.
    """
    data = Path(path).read_bytes()
    if len(data) < _MELX_HEADER.size:
        raise MelFormatError("truncated mel header")
    magic, version, m, n, digest = _MELX_HEADER.unpack_from(data)
    if magic != MELX_MAGIC:
        raise MelFormatError(f"bad magic {magic!r}, not a mel file")
    if version != MELX_VERSION:
        raise MelFormatError(f"unsupported mel file version {version}")
    if digest != bytes.fromhex(config.digest()):
        raise MelFormatError("analysis configuration hash does not match the model")
    if m != config.mel_bands:
        raise MelFormatError(f"{m} mel bands, model expects {config.mel_bands}")
    if len(data) != _MELX_HEADER.size + 4 * m * n:
        raise MelFormatError(f"payload size {len(data) - _MELX_HEADER.size} does not match {m}x{n} float32")
    values = np.frombuffer(data, dtype="<f4", offset=_MELX_HEADER.size).reshape(m, n)
    return MelSpectrogram(values.astype(np.float32), config)


def mel_to_audio(mel, run: RunConfig, weights: dict, noise_seed=0, vuv_flags=None):
    """Estimate controls from log-mel frames and render them.

    Mel values pass through float32 first, so audio rendered from a mel
    file matches audio rendered straight from a WAV.

    Returns
    -------
    (y, params) with ``y`` of length ``N * hop``.
    """
    values = mel.values if isinstance(mel, MelSpectrogram) else mel
    values = np.asarray(values, dtype=np.float32).astype(run.dtype)
    params = estimate_params(values, weights, run.model)
    y, y_h, y_n = (np.asarray(getattr(v, "data", v), dtype=np.float64) for v in synthesize(params, run, noise_seed))
    if vuv_flags is not None:
        y = vuv_postprocess(y_h, vuv_flags, run.synth.hop) + y_n
    return y, params


@dataclass
class ResynthResult:
    audio: AudioBuffer
    msstft: float
    mae_f0_cents: float
    voiced_frames: int


def _check_rate(audio: AudioBuffer, run: RunConfig) -> None:
    if audio.sample_rate != run.analysis.sample_rate:
        raise ValueError(
            f"sample-rate mismatch: input is {audio.sample_rate} Hz, model expects {run.analysis.sample_rate} Hz"
        )


def compare(reference: AudioBuffer, output: AudioBuffer, hop: int) -> tuple[float, float, int]:
    """MSSTFT and pitch MAE (frames voiced in both) of ``output`` against ``reference``."""
    n = min(len(reference), len(output))
    ref, out = reference.samples[:n], output.samples[:n]
    spectral = msstft_loss(ref, out)
    a = extract_pitch(AudioBuffer(ref, reference.sample_rate), hop=hop)
    b = extract_pitch(AudioBuffer(out, output.sample_rate), hop=hop)
    mask = a.voiced & b.voiced
    return spectral, mae_f0_cents(a.f0, b.f0, mask), int(mask.sum())


def resynthesize(audio: AudioBuffer, run: RunConfig, weights: dict, noise_seed=0,
                 vuv: bool = False) -> ResynthResult:
    """wav -> mel -> controls -> wav, with metrics against the input.

    With ``vuv`` the harmonic branch is gated by the input's voicing flags.
    """
    _check_rate(audio, run)
    mel = mel_spectrogram(audio, run.analysis)
    flags = extract_pitch(audio, hop=run.analysis.hop).voiced if vuv else None
    y, _ = mel_to_audio(mel, run, weights, noise_seed, flags)
    out = AudioBuffer(y, audio.sample_rate)
    spectral, mae, voiced = compare(audio, out, run.analysis.hop)
    return ResynthResult(out, spectral, mae, voiced)


def evaluate(run: RunConfig, weights: dict, excerpts: list[Excerpt], seed: int = 0, timing: bool = True) -> dict:
    """Metrics averaged over ``excerpts``.

    ``metrics`` depends only on the weights, data and seed; ``timing`` holds
    the measured real-time factor and varies between runs.
    """
    if not excerpts:
        raise ValueError("no excerpts to evaluate")
    rng = np.random.default_rng(seed)
    spectral, errors, frames = [], [], []
    elapsed = 0.0
    for ex in excerpts:
        start = time.perf_counter()
        y, _ = mel_to_audio(ex.mel, run, weights, rng)
        elapsed += time.perf_counter() - start
        out = AudioBuffer(y, ex.audio.sample_rate)
        spectral.append(msstft_loss(ex.audio.samples, y))
        track = extract_pitch(out, hop=run.analysis.hop)
        mask = ex.pitch.voiced & track.voiced
        errors.append(mae_f0_cents(ex.pitch.f0, track.f0, mask) * mask.sum())
        frames.append(mask.sum())
    seconds = sum(ex.audio.duration for ex in excerpts)
    report = {
        "backend": run.model.backend,
        "excerpts": len(excerpts),
        "seed": seed,
        "param_count": param_count(run.model),
        "metrics": {
            "msstft": float(np.mean(spectral)),
            "mae_f0_cents": float(np.sum(errors) / max(np.sum(frames), 1)),
            "voiced_frames": int(np.sum(frames)),
        },
    }
    if timing:
        report["timing"] = {"rtf": elapsed / seconds, "audio_seconds": seconds}
    return report
