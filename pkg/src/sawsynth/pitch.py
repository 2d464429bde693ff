"""f0 and voicing extraction with a cumulative-mean-normalised difference function.

Frame ``i`` is centred on sample ``i * hop`` (zero-padded at the edges), which
puts pitch frames on the same grid as the synthesizer's frame-rate controls.
A signal of ``T`` samples yields ``T // hop`` frames.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np
import scipy.fft as sfft
from scipy.ndimage import median_filter

from .signal_core import AudioBuffer

__all__ = ["PitchConfig", "PitchTrack", "extract_pitch", "smooth_vuv"]


@dataclass(frozen=True)
class PitchConfig:
    hop: int = 240
    fmin: float = 50.0
    fmax: float = 1000.0
    threshold: float = 0.15  # dip depth that ends the lag search early
    voicing_threshold: float = 0.5
    silence_db: float = -60.0
    continuity_frames: int = 9  # median window for octave-jump repair, 0 disables


@dataclass
class PitchTrack:
    """Per-frame pitch estimates; ``f0`` is 0 wherever ``voiced`` is false."""

    f0: np.ndarray
    voiced: np.ndarray
    periodicity: np.ndarray
    hop: int
    sample_rate: int

    def __post_init__(self):
        self.f0 = np.asarray(self.f0, dtype=float)
        self.voiced = np.asarray(self.voiced, dtype=bool)
        self.periodicity = np.asarray(self.periodicity, dtype=float)
        if np.any(self.f0[~self.voiced] != 0):
            raise ValueError("unvoiced frames must carry f0 == 0")

    def __len__(self) -> int:
        return len(self.f0)

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self)) * self.hop / self.sample_rate

    def to_csv(self, path) -> None:
        """Write ``frame_index, time_s, f0_hz, voiced, periodicity`` rows."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["frame_index", "time_s", "f0_hz", "voiced", "periodicity"])
            for i, (t, f, v, p) in enumerate(zip(self.times, self.f0, self.voiced, self.periodicity)):
                writer.writerow([i, f"{t:.6f}", f"{f:.4f}", int(v), f"{p:.6f}"])


def _difference(frames: np.ndarray, width: int) -> np.ndarray:
    """``d(tau) = sum_{j < width} (x_j - x_{j + tau})**2`` for every frame, via FFT."""
    n = frames.shape[-1]
    max_lag = n - width
    size = sfft.next_fast_len(n + width)
    head = frames[:, :width]
    acf = sfft.irfft(np.conj(sfft.rfft(head, size)) * sfft.rfft(frames, size), size)[:, : max_lag + 1]
    sq = np.concatenate([np.zeros((frames.shape[0], 1)), np.cumsum(frames**2, axis=1)], axis=1)
    shifted = sq[:, width : width + max_lag + 1] - sq[:, : max_lag + 1]
    d = sq[:, width : width + 1] + shifted - 2.0 * acf
    return np.maximum(d, 0.0)


def _cmnd(d: np.ndarray) -> np.ndarray:
    out = np.ones_like(d)
    lags = np.arange(1, d.shape[1])
    running = np.cumsum(d[:, 1:], axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        out[:, 1:] = np.where(running > 0, d[:, 1:] * lags / running, 1.0)
    return out


def _pick(row: np.ndarray, lo: int, hi: int, threshold: float) -> int:
    """First dip below ``threshold`` (followed to its local minimum), else the global minimum."""
    below = np.flatnonzero(row[lo : hi + 1] < threshold)
    if below.size:
        tau = lo + below[0]
        while tau < hi and row[tau + 1] < row[tau]:
            tau += 1
        return tau
    return lo + int(np.argmin(row[lo : hi + 1]))


def _parabolic(row: np.ndarray, tau: int) -> tuple[float, float]:
    if tau <= 0 or tau >= len(row) - 1:
        return float(tau), float(row[tau])
    a, b, c = row[tau - 1], row[tau], row[tau + 1]
    denom = a - 2.0 * b + c
    if denom <= 0:
        return float(tau), float(b)
    shift = 0.5 * (a - c) / denom
    return tau + shift, float(b - 0.25 * (a - c) * shift)


def extract_pitch(audio: AudioBuffer, hop: int = 240, fmin: float = 50.0, fmax: float = 1000.0,
                  config: PitchConfig | None = None) -> PitchTrack:
    """Frame-wise f0, periodicity and voicing.

    A frame is voiced when its periodicity (one minus the normalised
    difference at the chosen lag) is at least 0.5 and its RMS is at least
    -60 dBFS.

    Raises
    ------
    ValueError
        If the audio is shorter than ``2 * sample_rate / fmin`` samples.
    """
    config = config or PitchConfig(hop=hop, fmin=fmin, fmax=fmax)
    x = np.asarray(audio.samples, dtype=np.float64)
    sr = audio.sample_rate
    if len(x) < 2 * sr / config.fmin:
        raise ValueError(f"input too short: {len(x)} samples, need {int(2 * sr / config.fmin)}")
    lo = max(2, int(np.ceil(sr / config.fmax)))
    hi = int(np.floor(sr / config.fmin))
    width = hi  # integration window of one longest period
    n_frames = len(x) // config.hop
    # x[j] is compared with x[j + tau], so the analysed span is centred at
    # start + (width + tau) / 2; centre it for the geometric-mean lag
    mid_lag = sr / np.sqrt(config.fmin * config.fmax)
    half = int(round((width + mid_lag) / 2))
    padded = np.pad(x, (half, width + hi + 1))
    starts = np.arange(n_frames) * config.hop
    idx = starts[:, None] + np.arange(width + hi + 1)[None, :]
    frames = padded[idx]

    d = _cmnd(_difference(frames, width))
    f0 = np.zeros(n_frames)
    periodicity = np.zeros(n_frames)
    for i, row in enumerate(d):
        tau, depth = _parabolic(row, _pick(row, lo, hi, config.threshold))
        f0[i] = sr / tau
        periodicity[i] = np.clip(1.0 - depth, 0.0, 1.0)
    rms = np.sqrt(np.mean(frames[:, half - width // 2 : half + width // 2] ** 2, axis=1))  # centred on i * hop
    loud = 20.0 * np.log10(np.maximum(rms, 1e-12)) >= config.silence_db
    voiced = (periodicity >= config.voicing_threshold) & loud
    if config.continuity_frames > 1:
        _repair_jumps(d, f0, periodicity, voiced, sr, lo, hi, config)
    f0 = np.where(voiced, np.clip(f0, config.fmin, config.fmax), 0.0)
    return PitchTrack(f0, voiced, periodicity, config.hop, sr)


def _repair_jumps(d, f0, periodicity, voiced, sr, lo, hi, config: PitchConfig) -> None:
    """Re-pick frames more than half an octave away from the running median
    of their voiced neighbours, searching a quarter octave around the median
    period; frames without a deep enough dip there become unvoiced."""
    idx = np.flatnonzero(voiced)
    if idx.size < 3:
        return
    log_f = np.log2(f0[idx])
    # scipy returns zeros when the window is much longer than the input
    size = min(config.continuity_frames, idx.size)
    ref = median_filter(log_f, size=size, mode="nearest")
    jumps = np.abs(log_f - ref) > 0.5
    for i, r in zip(idx[jumps], ref[jumps]):
        period = sr / 2.0**r
        a = max(lo, int(np.floor(period * 2**-0.25)))
        b = min(hi, int(np.ceil(period * 2**0.25)))
        if a > b:
            voiced[i] = False
            continue
        tau = a + int(np.argmin(d[i, a : b + 1]))
        tau, depth = _parabolic(d[i], tau)
        periodicity[i] = np.clip(1.0 - depth, 0.0, 1.0)
        f0[i] = sr / tau
        voiced[i] = periodicity[i] >= config.voicing_threshold


def _runs(flags: np.ndarray) -> list[tuple[int, int]]:
    edges = np.flatnonzero(np.diff(flags.astype(np.int8))) + 1
    bounds = np.concatenate([[0], edges, [len(flags)]])
    return list(zip(bounds[:-1], bounds[1:]))


def smooth_vuv(track: PitchTrack, min_segment_frames: int = 3) -> PitchTrack:
    """Absorb voiced or unvoiced runs shorter than ``min_segment_frames`` into
    their surroundings, shortest run first, until none remain (or a single
    run covers the track). Frames switched to voiced take f0 interpolated from
    the voiced frames around them."""
    voiced = track.voiced.copy()
    while True:
        runs = _runs(voiced)
        if len(runs) < 2:
            break
        lengths = [b - a for a, b in runs]
        k = int(np.argmin(lengths))
        if lengths[k] >= min_segment_frames:
            break
        a, b = runs[k]
        voiced[a:b] = ~voiced[a]
    f0 = np.where(voiced, track.f0, 0.0)
    filled = voiced & ~track.voiced
    if filled.any():
        known = np.flatnonzero(track.voiced & voiced)
        if known.size:
            f0[filled] = np.interp(np.flatnonzero(filled), known, track.f0[known])
        else:
            voiced[filled] = False
    return replace(track, f0=f0, voiced=voiced)
