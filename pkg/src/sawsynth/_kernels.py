"""Compiled per-sample harmonic loops.

Partials are generated with the recurrence
``sin((k + 1) p) = 2 cos(p) sin(k p) - sin((k - 1) p)`` and faded out by a
smoothstep over ``k * f0`` that reaches exactly zero at ``cutoff``.
"""

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _gate(kf, cutoff, rolloff):
    x = (cutoff - kf) / rolloff
    if x >= 1.0:
        return 1.0
    return x * x * (3.0 - 2.0 * x)


@njit(cache=True)
def wrapped_phase(step, start):
    """Running sum of per-sample increments in cycles, wrapped to [0, 1)
    after every sample so rounding does not grow with signal length."""
    rows, length = step.shape
    out = np.empty((rows, length))
    for r in range(rows):
        c = start[r]
        for t in range(length):
            c += step[r, t]
            c -= np.floor(c)
            out[r, t] = c
    return out


@njit(cache=True)
def sawtooth(phase, f0, cutoff, rolloff, k_max, gain):
    """``gain * sum_k gate_k * sin(k * phase) / k`` over rows of a 2-D array."""
    rows, length = phase.shape
    out = np.zeros((rows, length))
    for r in range(rows):
        for t in range(length):
            f = f0[r, t]
            if f <= 0.0:
                continue
            p = phase[r, t]
            two_cos = 2.0 * np.cos(p)
            prev = 0.0
            cur = np.sin(p)
            acc = 0.0
            for k in range(1, k_max + 1):
                kf = k * f
                if kf >= cutoff:
                    break
                acc += _gate(kf, cutoff, rolloff) * cur / k
                prev, cur = cur, two_cos * cur - prev
            out[r, t] = gain * acc
    return out


@njit(cache=True)
def bank_forward(weights, phase, f0, hop, cutoff, rolloff):
    """Sum of gated partials whose frame-rate weights (rows, N, K) are
    interpolated linearly to the sample rate."""
    rows, n, k_max = weights.shape
    out = np.zeros((rows, n * hop))
    for r in range(rows):
        for t in range(n * hop):
            f = f0[r, t]
            if f <= 0.0:
                continue
            i = t // hop
            j = i + 1 if i + 1 < n else i
            frac = (t - i * hop) / hop
            p = phase[r, t]
            two_cos = 2.0 * np.cos(p)
            prev = 0.0
            cur = np.sin(p)
            acc = 0.0
            for k in range(k_max):
                kf = (k + 1) * f
                if kf >= cutoff:
                    break
                a = weights[r, i, k]
                acc += _gate(kf, cutoff, rolloff) * (a + (weights[r, j, k] - a) * frac) * cur
                prev, cur = cur, two_cos * cur - prev
            out[r, t] = acc
    return out


@njit(cache=True)
def bank_backward(grad, phase, f0, n, k_max, hop, cutoff, rolloff):
    """Adjoint of :func:`bank_forward` with respect to the weights."""
    rows = grad.shape[0]
    out = np.zeros((rows, n, k_max))
    for r in range(rows):
        for t in range(n * hop):
            f = f0[r, t]
            g = grad[r, t]
            if f <= 0.0 or g == 0.0:
                continue
            i = t // hop
            j = i + 1 if i + 1 < n else i
            frac = (t - i * hop) / hop
            p = phase[r, t]
            two_cos = 2.0 * np.cos(p)
            prev = 0.0
            cur = np.sin(p)
            for k in range(k_max):
                kf = (k + 1) * f
                if kf >= cutoff:
                    break
                v = g * _gate(kf, cutoff, rolloff) * cur
                out[r, i, k] += v * (1.0 - frac)
                out[r, j, k] += v * frac
                prev, cur = cur, two_cos * cur - prev
    return out
