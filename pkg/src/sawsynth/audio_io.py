"""16-bit PCM WAV reading/writing and polyphase resampling."""

from __future__ import annotations

import os
import warnings
import wave
from functools import lru_cache
from math import gcd
from pathlib import Path

import numpy as np
from scipy.signal import firwin, kaiserord, resample_poly

from .signal_core import AudioBuffer

__all__ = ["load_wav", "save_wav", "resample", "WavError"]


class WavError(ValueError):
    """Unreadable, unsupported or truncated WAV file."""


def load_wav(path) -> AudioBuffer:
    """Read a PCM 16-bit WAV file into samples scaled by 1/32768.

    Multi-channel files keep the first channel and emit a warning.
    """
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            n_frames = wf.getnframes()
            raw = wf.readframes(n_frames)
    except wave.Error as exc:
        raise WavError(f"{path}: unsupported or malformed WAV ({exc})") from exc
    except EOFError as exc:
        raise WavError(f"{path}: truncated WAV header") from exc
    if width != 2:
        raise WavError(f"{path}: unsupported encoding, {8 * width}-bit PCM (only 16-bit is read)")
    if n_frames == 0:
        raise WavError(f"{path}: empty data chunk")
    if len(raw) != n_frames * channels * width:
        raise WavError(f"{path}: truncated data, header declares {n_frames} frames, found {len(raw) // (channels * width)}")
    data = np.frombuffer(raw, dtype="<i2").reshape(-1, channels)
    if channels > 1:
        warnings.warn(f"{path.name}: {channels} channels, using the first", stacklevel=2)
    return AudioBuffer(data[:, 0].astype(np.float64) / 32768.0, rate)


def save_wav(path, audio: AudioBuffer) -> None:
    """Write mono 16-bit PCM (samples clipped to [-1, 1), rounded to the grid).

    The file appears atomically: it is written under a temporary name first.
    """
    path = Path(path)
    q = np.clip(np.round(np.asarray(audio.samples, dtype=np.float64) * 32768.0), -32768, 32767)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    try:
        with wave.open(str(tmp), "wb") as wf:
            wf.setnchannels(1)
            wf.setsampwidth(2)
            wf.setframerate(int(audio.sample_rate))
            wf.writeframes(q.astype("<i2").tobytes())
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


@lru_cache(maxsize=8)
def _design(src: int, up: int, down: int, attenuation: float) -> np.ndarray:
    """Kaiser lowpass at the upsampled rate ``src * up``: flat to 5/12 of the
    lower of the two rates and ``attenuation`` dB down from half of it."""
    rate = src * up
    low = min(src, src * up // down)
    edge_pass, edge_stop = low * 5 / 12, low / 2
    taps, beta = kaiserord(attenuation, (edge_stop - edge_pass) / (rate / 2))
    h = firwin(taps | 1, (edge_pass + edge_stop) / 2, window=("kaiser", beta), fs=rate)
    h.setflags(write=False)
    return h


def resample(audio: AudioBuffer, target_rate: int = 24000, attenuation: float = 80.0) -> AudioBuffer:
    """Windowed-sinc polyphase resampling to ``target_rate``.

    Identical rates return the input unchanged.
    """
    src = audio.sample_rate
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if src == target_rate:
        return audio
    g = gcd(src, target_rate)
    up, down = target_rate // g, src // g
    h = _design(src, up, down, attenuation)
    y = resample_poly(np.asarray(audio.samples, dtype=np.float64), up, down, window=np.array(h))
    return AudioBuffer(y, target_rate)
