"""Oscillators, the subtractive sawtooth branch, the additive harmonic branch and
filtered noise.

Timing convention: frame-rate controls ``v[i]`` sit at sample ``i * hop`` and
are linearly interpolated to the sample rate (see
:func:`~sawsynth.signal_core.upsample_linear`). The frame-wise filters follow
the analysis framing of :mod:`sawsynth.signal_core`: frame ``i`` covers
``[i * hop, i * hop + window)`` with ``window = 4 * hop``.

f0 never carries gradient into the synthesizer. Phases, the sawtooth source and
the harmonic gates are computed in plain numpy from detached f0 values; only
filter responses, amplitudes and harmonic weights are differentiable.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
import scipy.fft as sfft
from scipy.ndimage import distance_transform_edt

from . import _kernels
from . import grad as G
from .grad import Tensor
from .grad.tensor import _make
from .signal_core import _pad_end, frame_count

__all__ = [
    "SynthConfig",
    "SynthParams",
    "OscState",
    "integrate_phase",
    "integrate_phase_samples",
    "harmonic_gate",
    "sawtooth_source",
    "filter_matrix",
    "equivalent_fir",
    "apply_ltv_fir",
    "noise_branch",
    "harmonic_bank",
    "sawsing_forward",
    "ddsp_add_forward",
    "vuv_gate",
    "vuv_postprocess",
]


@dataclass(frozen=True)
class SynthConfig:
    """Synthesizer constants.

    ``nyquist_margin`` keeps every partial at least that far below Nyquist and
    ``rolloff`` is the width (Hz) of the smooth fade applied just below that
    limit.
    """

    sample_rate: int = 24000
    hop: int = 240
    harmonic_fir: int = 256
    noise_fir: int = 80
    max_harmonics: int = 150
    source_gain: float = 0.4
    nyquist_margin: float = 20.0
    rolloff: float = 100.0

    def __post_init__(self):
        if self.harmonic_fir % 2 or self.noise_fir % 2:
            raise ValueError("filter lengths must be even")

    @property
    def window(self) -> int:
        return 4 * self.hop

    @property
    def cutoff(self) -> float:
        return self.sample_rate / 2 - self.nyquist_margin

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SynthParams:
    """Per-frame synthesizer controls.

    Arrays may carry a leading batch axis. ``f0`` has shape (N,), the
    responses (N, L/2 + 1). ``amplitude`` (N,) and ``harmonic_weights`` (N, K)
    are used by the additive backend only.
    """

    f0: np.ndarray
    harmonic_response: object = None
    noise_response: object = None
    amplitude: object = None
    harmonic_weights: object = None

    @property
    def frames(self) -> int:
        return np.shape(_value(self.f0))[-1]


@dataclass
class OscState:
    """Oscillator phase carried across chunk boundaries (radians, wrapped)."""

    phase: np.ndarray = field(default_factory=lambda: np.zeros(()))


def _value(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


# ---------------------------------------------------------------------------
# oscillators
# ---------------------------------------------------------------------------


def _check_f0(f0: np.ndarray, sample_rate: int) -> None:
    if np.any(f0 < 0) or not np.all(np.isfinite(f0)):
        raise ValueError("f0 must be finite and non-negative")
    if np.any(f0 >= sample_rate / 2):
        raise ValueError(f"f0 must stay below Nyquist ({sample_rate / 2} Hz)")


def integrate_phase_samples(f0_samples, sample_rate: int, state: OscState | None = None):
    """Running phase of a per-sample f0 track.

    ``phase[t] = (phase0 + 2*pi * sum(f0[:t + 1]) / sample_rate) mod 2*pi``,
    accumulated sample by sample in wrapped form. Splitting a track into
    chunks and carrying the returned state therefore repeats the single-pass
    arithmetic up to one rounding of the state per chunk.

    Returns
    -------
    phase : ndarray, same shape as ``f0_samples``
    state : OscState
        Wrapped final phase, to be passed to the next chunk.
    """
    f0 = np.asarray(_value(f0_samples), dtype=np.float64)
    _check_f0(f0, sample_rate)
    phase0 = np.zeros(f0.shape[:-1]) if state is None else np.asarray(state.phase, dtype=np.float64)
    start = np.broadcast_to(np.mod(phase0 / (2.0 * np.pi), 1.0), f0.shape[:-1]).reshape(-1)
    if f0.shape[-1] == 0:
        return np.zeros(f0.shape), OscState(2.0 * np.pi * start.reshape(f0.shape[:-1]))
    cycles = _kernels.wrapped_phase(_rows(f0 / sample_rate), np.ascontiguousarray(start))
    phase = 2.0 * np.pi * cycles.reshape(f0.shape)
    return phase, OscState(phase[..., -1].copy())


def integrate_phase(f0_frames, hop: int, sample_rate: int, state: OscState | None = None):
    """Upsample frame-rate f0 linearly and integrate it into a base phase.

    The phase of harmonic ``k`` is ``k * phase``. A fresh state starts at 0.
    """
    f0 = np.asarray(_value(f0_frames), dtype=np.float64)
    _check_f0(f0, sample_rate)
    return integrate_phase_samples(G.ops.upsample_linear_array(f0, hop), sample_rate, state)


def harmonic_gate(k: int, f0: np.ndarray, config: SynthConfig) -> np.ndarray:
    """Anti-aliasing weight of partial ``k``: 1 well below the limit, exactly 0
    at or above ``sample_rate / 2 - nyquist_margin``, smoothstep in between.
    Unvoiced samples (f0 == 0) get weight 0."""
    x = np.clip((config.cutoff - k * f0) / config.rolloff, 0.0, 1.0)
    return np.where(f0 > 0, x * x * (3.0 - 2.0 * x), 0.0)


def _rows(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float64).reshape(-1, x.shape[-1])


def sawtooth_source(phase, f0_samples, config: SynthConfig | None = None) -> np.ndarray:
    """Band-limited sawtooth ``gain * sum_k gate_k * sin(k * phase) / k``.

    Parameters
    ----------
    phase : ndarray (..., T)
        Base phase from :func:`integrate_phase`.
    f0_samples : ndarray (..., T)
        Per-sample f0 in Hz. It sets the number of partials (at most
        ``max_harmonics``) and silences samples where it is 0.
    """
    config = config or SynthConfig()
    phase = np.asarray(phase, dtype=np.float64)
    f0 = np.broadcast_to(np.asarray(_value(f0_samples), dtype=np.float64), phase.shape)
    out = _kernels.sawtooth(
        _rows(phase), _rows(f0), config.cutoff, config.rolloff, config.max_harmonics, config.source_gain
    )
    return out.reshape(phase.shape)


# ---------------------------------------------------------------------------
# frame-wise FIR filtering
# ---------------------------------------------------------------------------


def _fft_size(window: int, fir_length: int) -> int:
    return sfft.next_fast_len(window + fir_length, real=True)


@lru_cache(maxsize=16)
def _taps_matrix(fir_length: int) -> np.ndarray:
    """Linear map from L/2+1 magnitudes to L circular zero-phase taps (Hann tapered)."""
    points = fir_length // 2 + 1
    taps = sfft.irfft(np.eye(points), n=fir_length, axis=-1)
    n = np.arange(fir_length)
    taper = 0.5 + 0.5 * np.cos(2.0 * np.pi * n / fir_length)
    return taps * taper  # (points, L)


@lru_cache(maxsize=16)
def _filter_matrix(fir_length: int, fft_size: int) -> np.ndarray:
    taps = _taps_matrix(fir_length)
    half = fir_length // 2
    embed = np.zeros((taps.shape[0], fft_size))
    embed[:, : half + 1] = taps[:, : half + 1]
    embed[:, fft_size - half + 1 :] = taps[:, half + 1 :]
    m = sfft.rfft(embed, axis=-1).real.T.copy()  # (F, points)
    m.setflags(write=False)
    return m


def filter_matrix(fir_length: int, fft_size: int) -> np.ndarray:
    """Matrix ``M`` with ``H = M @ psi``: zero-phase transfer function on an
    ``fft_size`` grid from ``fir_length // 2 + 1`` magnitude points."""
    return _filter_matrix(int(fir_length), int(fft_size)).copy()


def equivalent_fir(response, fir_length: int) -> np.ndarray:
    """Symmetric time-domain taps (lags ``-L/2 .. L/2``) realised for one
    frame's magnitude response."""
    circ = np.asarray(response, dtype=np.float64) @ _taps_matrix(fir_length)
    half = fir_length // 2
    return np.concatenate([circ[..., half:], circ[..., : half + 1]], axis=-1)


@lru_cache(maxsize=32)
def _inverse_envelope(n_frames: int, hop: int, window: int, length: int) -> np.ndarray:
    from .grad.ops import overlap_add_array
    from .signal_core import _hann

    env = overlap_add_array(np.broadcast_to(_hann(window), (n_frames, window)).copy(), hop)[:length]
    inv = 1.0 / np.maximum(env, 1e-3)
    inv.setflags(write=False)
    return inv


def _filter_frames(frames, response, fir_length: int, hop: int, length: int):
    """Window, filter and overlap-add ``(..., N, window)`` frames."""
    from .signal_core import _hann

    window = frames.shape[-1]
    n_frames = frames.shape[-2]
    dtype = frames.dtype if frames.dtype.kind == "f" else np.float64
    nfft = _fft_size(window, fir_length)
    spec = G.rfft(frames * _hann(window).astype(dtype), n=nfft)
    transfer = G.matmul(response, _filter_matrix(fir_length, nfft).T.astype(dtype))
    out = G.irfft(spec * transfer, n=nfft)
    half = fir_length // 2
    out = G.concatenate([out[..., nfft - half :], out[..., : nfft - half]], axis=-1)
    y = G.overlap_add(out, hop)[..., half : half + length]
    return y * _inverse_envelope(n_frames, hop, window, length).astype(dtype)


def apply_ltv_fir(source, response, fir_length: int, hop: int, window: int | None = None):
    """Filter ``source`` with one zero-phase FIR per frame.

    Parameters
    ----------
    source : ndarray or Tensor (..., T)
    response : ndarray or Tensor (..., N, fir_length // 2 + 1)
        Non-negative magnitude response per frame; ``N`` must equal the
        analysis frame count of ``source`` for ``hop``.
    window : int, optional
        Analysis window length, ``4 * hop`` by default.

    Returns
    -------
    Filtered signal of length ``T`` (Tensor if either input is a Tensor).
    """
    window = 4 * hop if window is None else window
    keep = isinstance(source, Tensor) or isinstance(response, Tensor)
    x = source if isinstance(source, Tensor) else Tensor(np.asarray(source))
    if x.dtype.kind != "f":
        x = Tensor(x.data.astype(np.float64))
    psi = response if isinstance(response, Tensor) else Tensor(np.asarray(response, dtype=x.dtype))
    if psi.shape[-1] != fir_length // 2 + 1:
        raise ValueError(f"response needs {fir_length // 2 + 1} points for fir_length {fir_length}")
    length = x.shape[-1]
    n_frames = frame_count(length, hop, window)
    if psi.shape[-2] != n_frames:
        raise ValueError(f"frame-count mismatch: response has {psi.shape[-2]} frames, source needs {n_frames}")
    frames = G.frame(_pad_end(x, window - hop), window, hop)
    y = _filter_frames(frames, psi, fir_length, hop, length)
    return y if keep else y.data


def noise_branch(response, noise_seed, hop: int, length: int, window: int | None = None, fir_length: int = 80):
    """Filtered uniform noise: one independent Uniform(-1, 1) segment of
    ``window`` samples per frame, shaped by that frame's response and
    overlap-added.

    ``noise_seed`` may be an int or a ``numpy.random.Generator``.
    """
    window = 4 * hop if window is None else window
    keep = isinstance(response, Tensor)
    psi = response if keep else Tensor(np.asarray(response, dtype=float))
    n_frames = psi.shape[-2]
    if length != n_frames * hop:
        raise ValueError(f"length {length} does not match {n_frames} frames of hop {hop}")
    rng = noise_seed if isinstance(noise_seed, np.random.Generator) else np.random.default_rng(noise_seed)
    zeta = rng.uniform(-1.0, 1.0, size=psi.shape[:-1] + (window,)).astype(psi.dtype)
    y = _filter_frames(Tensor(zeta), psi, fir_length, hop, length)
    return y if keep else y.data


# ---------------------------------------------------------------------------
# additive harmonic bank
# ---------------------------------------------------------------------------


def harmonic_bank(weights, phase, f0_samples, hop: int, config: SynthConfig | None = None) -> Tensor:
    """``sum_k c_k(t) * gate_k(t) * sin(k * phase(t))``.

    ``weights`` (..., N, K) are interpolated linearly from frame to sample
    rate. Partials are regenerated in the backward pass instead of stored.
    """
    config = config or SynthConfig()
    c = G.as_tensor(weights)
    phase = np.asarray(phase, dtype=np.float64)
    n, k_max = c.shape[-2:]
    if phase.shape[-1] != n * hop:
        raise ValueError("phase length must equal frames * hop")
    f0 = _rows(np.broadcast_to(np.asarray(_value(f0_samples), dtype=np.float64), phase.shape))
    ph = _rows(phase)
    args = (config.cutoff, config.rolloff)
    w = np.ascontiguousarray(c.data, dtype=np.float64).reshape(-1, n, k_max)
    out = _kernels.bank_forward(w, ph, f0, hop, *args).reshape(phase.shape).astype(c.dtype)

    def fn(g):
        gc = _kernels.bank_backward(_rows(g), ph, f0, n, k_max, hop, *args)
        return (gc.reshape(c.shape).astype(c.dtype),)

    return _make(out, (c,), fn)


# ---------------------------------------------------------------------------
# full synthesizers
# ---------------------------------------------------------------------------


def _noise(params: SynthParams, config: SynthConfig, noise_seed, length: int):
    return noise_branch(
        params.noise_response, noise_seed, config.hop, length, config.window, config.noise_fir
    )


def _f0_samples(params: SynthParams, config: SynthConfig):
    f0 = np.asarray(_value(params.f0), dtype=np.float64)
    phase, _ = integrate_phase(f0, config.hop, config.sample_rate)
    return f0, phase, G.ops.upsample_linear_array(f0, config.hop)


def sawsing_forward(params: SynthParams, config: SynthConfig | None = None, noise_seed=0):
    """Sawtooth source through frame-wise harmonic filters plus filtered noise.

    Returns
    -------
    (y, y_h, y_n), each of length ``N * hop``; Tensors when any response is a
    Tensor.
    """
    config = config or SynthConfig()
    f0, phase, f0_up = _f0_samples(params, config)
    length = f0.shape[-1] * config.hop
    src = sawtooth_source(phase, f0_up, config)
    psi_h = params.harmonic_response
    if not isinstance(psi_h, Tensor):
        psi_h = np.asarray(psi_h, dtype=float)
    dtype = psi_h.dtype
    y_h = apply_ltv_fir(src.astype(dtype), psi_h, config.harmonic_fir, config.hop, config.window)
    y_n = _noise(params, config, noise_seed, length)
    return y_h + y_n, y_h, y_n


def ddsp_add_forward(params: SynthParams, config: SynthConfig | None = None, noise_seed=0):
    """Additive harmonic synthesis ``A(t) * sum_k c_k(t) sin(k phase(t))`` plus
    filtered noise. Partials at or above the Nyquist limit get zero weight."""
    config = config or SynthConfig()
    f0, phase, f0_up = _f0_samples(params, config)
    length = f0.shape[-1] * config.hop
    keep = any(isinstance(v, Tensor) for v in (params.amplitude, params.harmonic_weights, params.noise_response))
    bank = harmonic_bank(params.harmonic_weights, phase, f0_up, config.hop, config)
    amp = G.upsample_linear(G.as_tensor(params.amplitude, like=bank), config.hop)
    y_h = amp * bank
    y_n = _noise(params, config, noise_seed, length)
    y = y_h + y_n
    if keep:
        return y, y_h, G.as_tensor(y_n)
    return y.data, y_h.data, _value(y_n)


# ---------------------------------------------------------------------------
# voiced / unvoiced gating
# ---------------------------------------------------------------------------


def vuv_gate(vuv_flags, hop: int) -> np.ndarray:
    """Per-sample gate: 0 on every sample owned by an unvoiced frame (frame
    ``i`` owns ``[i * hop, (i + 1) * hop)``), 1 on voiced samples at least
    ``hop`` away from unvoiced ones, and a linear ramp in between."""
    flags = np.asarray(vuv_flags, dtype=bool)
    voiced = np.repeat(flags, hop, axis=-1)
    if voiced.all():
        return np.ones(voiced.shape)
    if flags.ndim > 1:
        return np.stack([vuv_gate(f, hop) for f in flags])
    return np.minimum(1.0, distance_transform_edt(voiced) / hop)


def vuv_postprocess(y_h, vuv_flags, hop: int = 240):
    """Silence the harmonic branch on unvoiced frames with ``hop``-long fades."""
    flags = np.asarray(vuv_flags)
    length = y_h.shape[-1]
    if flags.shape[-1] * hop != length:
        raise ValueError(f"length mismatch: {flags.shape[-1]} flags for {length} samples at hop {hop}")
    gate = vuv_gate(flags, hop)
    if isinstance(y_h, Tensor):
        return y_h * gate.astype(y_h.dtype)
    return np.asarray(y_h) * gate
