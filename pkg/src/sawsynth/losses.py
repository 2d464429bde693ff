"""Training losses and evaluation metrics."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass

import numpy as np

from . import grad as G
from .grad import Tensor
from .signal_core import LOG_FLOOR, AudioBuffer, magnitude_spectrogram

__all__ = [
    "FFT_SIZES",
    "LossBreakdown",
    "msstft_loss",
    "f0_loss",
    "mae_f0_cents",
    "real_time_factor",
    "RtfReport",
]

FFT_SIZES = (128, 256, 512, 1024)


@dataclass
class LossBreakdown:
    msstft: float
    f0_loss: float

    @property
    def total(self) -> float:
        return self.msstft + self.f0_loss


def _samples(x):
    return x.samples if isinstance(x, AudioBuffer) else x


def msstft_loss(y, y_hat, fft_sizes=FFT_SIZES):
    """Multi-resolution spectral distance.

    For every FFT size (hop = size / 4) the mean absolute difference of linear
    magnitudes plus the mean absolute difference of their logs (floored at
    1e-5) is taken; the per-resolution terms are summed. Means run over bins,
    frames and any batch axis.

    Returns a float, or a scalar Tensor when either input is a Tensor.
    """
    if isinstance(y, AudioBuffer) and isinstance(y_hat, AudioBuffer) and y.sample_rate != y_hat.sample_rate:
        raise ValueError("sample-rate mismatch between signals")
    a, b = _samples(y), _samples(y_hat)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    taped = isinstance(a, Tensor) or isinstance(b, Tensor)
    total = 0.0
    for n in fft_sizes:
        sa = magnitude_spectrogram(a, n, n // 4)
        sb = magnitude_spectrogram(b, n, n // 4)
        if taped:
            diff = G.tabs(sa - sb).mean()
            logs = G.tabs(G.log(sa + LOG_FLOOR) - G.log(sb + LOG_FLOOR)).mean()
        else:
            diff = np.abs(sa - sb).mean()
            logs = np.abs(np.log(sa + LOG_FLOOR) - np.log(sb + LOG_FLOOR)).mean()
        total = total + diff + logs
    return total if taped else float(total)


def _validate_f0(f0_true, f0_pred, mask):
    t = np.asarray(f0_true.data if isinstance(f0_true, Tensor) else f0_true, dtype=float)
    p = f0_pred.data if isinstance(f0_pred, Tensor) else np.asarray(f0_pred, dtype=float)
    m = np.asarray(mask, dtype=bool)
    if t.shape != p.shape or m.shape != t.shape:
        raise ValueError(f"length mismatch: {t.shape}, {p.shape}, mask {m.shape}")
    if np.any(t[m] <= 0) or np.any(p[m] <= 0):
        raise ValueError("non-positive f0 inside the voiced mask")
    return t, m


def f0_loss(f0_true, f0_pred, voicing_mask):
    """Mean ``|log f0 - log f0_hat|`` over voiced frames (0 if none are voiced).

    ``f0_pred`` may be a Tensor, in which case the result is a scalar Tensor.
    """
    t, m = _validate_f0(f0_true, f0_pred, voicing_mask)
    count = int(m.sum())
    if isinstance(f0_pred, Tensor):
        safe_true = np.where(m, t, 1.0).astype(f0_pred.dtype)
        safe_pred = G.where(m, f0_pred, 1.0)
        diff = G.tabs(G.log(safe_pred) - np.log(safe_true)) * m.astype(f0_pred.dtype)
        return diff.sum() * (1.0 / max(count, 1))
    if count == 0:
        return 0.0
    p = np.asarray(f0_pred, dtype=float)
    return float(np.mean(np.abs(np.log(p[m]) - np.log(t[m]))))


def mae_f0_cents(f0_true, f0_pred, voicing_mask) -> float:
    """Mean ``1200 * |log2(f0_hat / f0)|`` over voiced frames, in cents."""
    t, m = _validate_f0(f0_true, f0_pred, voicing_mask)
    if not m.any():
        return 0.0
    p = np.asarray(f0_pred.data if isinstance(f0_pred, Tensor) else f0_pred, dtype=float)
    return float(np.mean(1200.0 * np.abs(np.log2(p[m] / t[m]))))


@dataclass
class RtfReport:
    rtf: float
    audio_seconds: float
    trials: list[float]


def real_time_factor(synthesis_fn, params, trials: int = 5, audio_seconds: float | None = None) -> RtfReport:
    """Median wall time per second of audio over ``trials`` calls.

    ``synthesis_fn(params)`` must return the synthesized samples (an array,
    Tensor, AudioBuffer or a tuple whose first item is one of those). The
    duration is read from the output assuming 24 kHz unless ``audio_seconds``
    is given or the output is an AudioBuffer.
    """
    if trials < 3:
        raise ValueError("need at least 3 trials")
    times = []
    out = None
    for _ in range(trials):
        start = time.perf_counter()
        out = synthesis_fn(params)
        times.append(time.perf_counter() - start)
    if audio_seconds is None:
        first = out[0] if isinstance(out, tuple) else out
        if isinstance(first, AudioBuffer):
            audio_seconds = first.duration
        else:
            audio_seconds = np.shape(first.data if isinstance(first, Tensor) else first)[-1] / 24000
    return RtfReport(statistics.median(times) / audio_seconds, audio_seconds, times)
