"""Windowed transforms, mel analysis, overlap-add and frame-rate upsampling.

Framing convention: frame ``i`` starts at sample ``i * hop`` and the signal is
reflect-padded at the end by ``window_size - hop`` samples, so a signal of
``T`` samples yields ``T // hop`` frames (200 frames for 2 s at 24 kHz with a
240-sample hop).

Every function accepts either numpy arrays or :class:`~sawsynth.grad.Tensor`
input and answers in kind, so the same code serves analysis and training.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from . import grad as G
from .grad import Tensor

__all__ = [
    "AudioBuffer",
    "AnalysisConfig",
    "Spectrogram",
    "MelSpectrogram",
    "hann_window",
    "frame_count",
    "stft",
    "istft",
    "magnitude_spectrogram",
    "mel_filterbank",
    "mel_spectrogram",
    "log_mel",
    "overlap_add",
    "upsample_linear",
    "hz_to_mel",
    "mel_to_hz",
]

LOG_FLOOR = 1e-5


@dataclass(frozen=True)
class AudioBuffer:
    """Mono audio samples with their sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        samples = np.asarray(self.samples)
        if samples.ndim != 1:
            raise ValueError("AudioBuffer holds a 1-D sample sequence")
        if samples.dtype.kind != "f":
            samples = samples.astype(np.float64)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class AnalysisConfig:
    """Mel front-end settings."""

    sample_rate: int = 24000
    window: int = 1024
    hop: int = 240
    mel_bands: int = 80
    fmin: float = 40.0
    fmax: float = 12000.0

    def __post_init__(self):
        if self.hop > self.window:
            raise ValueError("hop must not exceed the window length")
        if not 0 <= self.fmin < self.fmax <= self.sample_rate / 2:
            raise ValueError("need 0 <= fmin < fmax <= sample_rate / 2")

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        """Stable SHA-256 of the configuration (hex)."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class Spectrogram:
    magnitudes: np.ndarray  # (F, N)
    fft_size: int
    hop: int
    window_size: int

    def __post_init__(self):
        if self.magnitudes.shape[-2] != self.fft_size // 2 + 1:
            raise ValueError("magnitudes must have fft_size // 2 + 1 rows")


@dataclass
class MelSpectrogram:
    values: np.ndarray  # (M, N) log-mel energies
    config: AnalysisConfig

    def __post_init__(self):
        if self.values.shape[-2] != self.config.mel_bands:
            raise ValueError(
                f"expected {self.config.mel_bands} mel bands, got {self.values.shape[-2]}"
            )

    @property
    def mel_bands(self) -> int:
        return self.values.shape[-2]

    @property
    def frames(self) -> int:
        return self.values.shape[-1]


def _samples(x):
    return x.samples if isinstance(x, AudioBuffer) else x


def _lift(x) -> tuple[Tensor, bool]:
    x = _samples(x)
    if isinstance(x, Tensor):
        return x, True
    return Tensor(np.asarray(x, dtype=float) if np.asarray(x).dtype.kind in "biu" else np.asarray(x)), False


def _lower(t: Tensor, keep: bool):
    return t if keep else t.data


@lru_cache(maxsize=32)
def _hann(n: int) -> np.ndarray:
    w = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
    w.setflags(write=False)
    return w


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window (constant overlap-add at 50% and 75% overlap)."""
    return _hann(int(n)).copy()


def frame_count(length: int, hop: int, window_size: int) -> int:
    """Number of frames under the left-aligned, end-padded convention."""
    if length < window_size:
        raise ValueError(f"input too short: {length} samples, window is {window_size}")
    return (length - hop) // hop + 1


def _pad_end(x: Tensor, n: int) -> Tensor:
    if n == 0:
        return x
    if n > x.shape[-1] - 1:
        raise ValueError("input too short for reflect padding")
    tail = x[..., -2 : -2 - n : -1]
    return G.concatenate([x, tail], axis=-1)


def _window_for(t: Tensor, n: int) -> np.ndarray:
    dtype = t.dtype if t.dtype.kind == "f" else np.float64
    return _hann(n).astype(dtype, copy=False)


def stft(audio, fft_size: int, hop: int, window_size: int | None = None):
    """Short-time Fourier transform with a periodic Hann window.

    Parameters
    ----------
    audio : AudioBuffer, ndarray or Tensor, shape (..., T)
    fft_size, hop, window_size : int
        ``window_size`` defaults to ``fft_size``; frames shorter than the FFT
        are zero-padded on the right.

    Returns
    -------
    Complex array or Tensor of shape (..., fft_size // 2 + 1, N).
    """
    window_size = fft_size if window_size is None else window_size
    if fft_size < window_size:
        raise ValueError("fft_size must be at least window_size")
    if not 0 < hop <= window_size:
        raise ValueError("hop must be in (0, window_size]")
    x, keep = _lift(audio)
    if x.shape[-1] < window_size:
        raise ValueError(f"input too short: {x.shape[-1]} samples, window is {window_size}")
    padded = _pad_end(x, window_size - hop)
    frames = G.frame(padded, window_size, hop) * _window_for(x, window_size)
    spec = G.rfft(frames, n=fft_size)
    return _lower(G.swapaxes(spec, -1, -2), keep)


@lru_cache(maxsize=32)
def _ola_envelope(n_frames: int, hop: int, window_size: int, power: int) -> np.ndarray:
    from .grad.ops import overlap_add_array

    w = _hann(window_size) ** power
    env = overlap_add_array(np.broadcast_to(w, (n_frames, window_size)).copy(), hop)
    env.setflags(write=False)
    return env


def istft(frames, fft_size: int, hop: int, window_size: int | None = None, length: int | None = None):
    """Inverse of :func:`stft` by weighted overlap-add.

    Each inverse frame is multiplied by the Hann window and the sum is divided
    by the overlap-added squared window, which makes ``istft(stft(y))`` exact
    wherever that envelope is non-zero. The output has ``N * hop`` samples
    unless ``length`` is given.
    """
    window_size = fft_size if window_size is None else window_size
    spec, keep = _lift(frames)
    if spec.ndim < 2 or spec.shape[-2] != fft_size // 2 + 1:
        raise ValueError(
            f"expected {fft_size // 2 + 1} frequency rows for fft_size {fft_size}, got shape {spec.shape}"
        )
    n_frames = spec.shape[-1]
    time = G.irfft(G.swapaxes(spec, -1, -2), n=fft_size)[..., :window_size]
    win = _hann(window_size).astype(time.dtype, copy=False)
    y = G.overlap_add(time * win, hop)
    env = _ola_envelope(n_frames, hop, window_size, 2)
    norm = np.where(env > 1e-10 * env.max(), 1.0 / np.where(env > 0, env, 1.0), 0.0).astype(time.dtype)
    y = y * norm
    length = n_frames * hop if length is None else length
    if length > y.shape[-1]:
        y = G.pad(y, [(0, 0)] * (y.ndim - 1) + [(0, length - y.shape[-1])])
    return _lower(y[..., :length], keep)


def magnitude_spectrogram(audio, fft_size: int, hop: int, window_size: int | None = None):
    """``|stft|`` as array/Tensor of shape (..., F, N)."""
    spec = stft(audio, fft_size, hop, window_size)
    if isinstance(spec, Tensor):
        return G.tabs(spec)
    return np.abs(spec)


def hz_to_mel(f):
    """HTK mel scale."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


@lru_cache(maxsize=16)
def _mel_fb(sample_rate: int, n_fft: int, n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (center - lower)
    falling = (upper - freqs) / (upper - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb *= (2.0 / (upper - lower))  # unit area in Hz
    fb.setflags(write=False)
    return fb


def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    """Triangular, area-normalised HTK mel filterbank of shape (n_mels, n_fft // 2 + 1)."""
    return _mel_fb(int(sample_rate), int(n_fft), int(n_mels), float(fmin), float(fmax)).copy()


def log_mel(samples, config: AnalysisConfig) -> np.ndarray:
    """Log-mel energies of raw samples, shape (..., M, N)."""
    spec = stft(np.asarray(samples), config.window, config.hop)
    power = spec.real**2 + spec.imag**2
    fb = _mel_fb(config.sample_rate, config.window, config.mel_bands, config.fmin, config.fmax)
    return np.log(np.einsum("mf,...fn->...mn", fb, power) + LOG_FLOOR)


def mel_spectrogram(audio: AudioBuffer, config: AnalysisConfig | None = None) -> MelSpectrogram:
    """80-band log-mel spectrogram with the default configuration.

    Raises
    ------
    ValueError
        If the audio sample rate differs from ``config.sample_rate``.
    """
    config = config or AnalysisConfig()
    if audio.sample_rate != config.sample_rate:
        raise ValueError(
            f"sample-rate mismatch: audio is {audio.sample_rate} Hz, config expects {config.sample_rate} Hz"
        )
    return MelSpectrogram(values=log_mel(audio.samples, config), config=config)


def overlap_add(segments, hop: int):
    """Overlap-add equal-length segments placed ``hop`` samples apart.

    Output length is ``(N - 1) * hop + segment_length``.
    """
    if isinstance(segments, Tensor):
        return G.overlap_add(segments, hop)
    if isinstance(segments, (list, tuple)):
        if not segments:
            raise ValueError("overlap_add needs at least one segment")
        if len({len(s) for s in segments}) != 1:
            raise ValueError("all segments must have the same length")
        segments = np.stack([np.asarray(s) for s in segments])
    arr = np.asarray(segments)
    if arr.ndim < 2 or arr.shape[-2] == 0:
        raise ValueError("overlap_add needs at least one segment")
    return G.overlap_add(Tensor(arr), hop).data


def upsample_linear(frame_values, hop: int):
    """Linear interpolation from frame rate to sample rate.

    ``out[i * hop] == frame_values[i]``; the last frame value is held for the
    trailing ``hop`` samples, so ``N`` frames give ``N * hop`` samples.
    """
    x, keep = _lift(frame_values)
    return _lower(G.upsample_linear(x, hop), keep)
