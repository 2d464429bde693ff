"""Structured primitives: FFTs, framing, overlap-add, interpolation, convolution
and the normalisation layers used by the parameter estimator."""

from __future__ import annotations

import numpy as np
import scipy.fft as sfft
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, _make, as_tensor, mean, sqrt

__all__ = [
    "rfft",
    "irfft",
    "frame",
    "overlap_add",
    "upsample_linear",
    "conv1d",
    "softmax",
    "layer_norm",
    "group_norm",
    "frame_array",
    "overlap_add_array",
    "upsample_linear_array",
]


# ---------------------------------------------------------------------------
# numpy kernels (shared by forward and adjoint passes)
# ---------------------------------------------------------------------------


def frame_array(x: np.ndarray, size: int, hop: int) -> np.ndarray:
    """Slice the last axis into ``(..., n_frames, size)`` frames, left aligned."""
    if x.shape[-1] < size:
        raise ValueError(f"input too short: {x.shape[-1]} samples for a {size}-sample frame")
    view = sliding_window_view(x, size, axis=-1)[..., ::hop, :]
    return np.ascontiguousarray(view)


def overlap_add_array(frames: np.ndarray, hop: int, length: int | None = None) -> np.ndarray:
    """Sum ``(..., n_frames, size)`` frames placed ``hop`` samples apart."""
    n, size = frames.shape[-2:]
    total = (n - 1) * hop + size
    chunks = -(-size // hop)
    lead = frames.shape[:-2]
    fp = frames
    if chunks * hop != size:
        fp = np.concatenate([frames, np.zeros(lead + (n, chunks * hop - size), frames.dtype)], axis=-1)
    fp = fp.reshape(lead + (n, chunks, hop))
    out = np.zeros(lead + (n + chunks - 1, hop), dtype=frames.dtype)
    # descending chunk order adds frames in ascending index order per sample
    for j in reversed(range(chunks)):
        out[..., j : j + n, :] += fp[..., :, j, :]
    out = out.reshape(lead + ((n + chunks - 1) * hop,))[..., :total]
    if length is not None:
        if length > total:
            out = np.concatenate([out, np.zeros(lead + (length - total,), out.dtype)], axis=-1)
        else:
            out = out[..., :length]
    return out


def upsample_linear_array(values: np.ndarray, hop: int) -> np.ndarray:
    ramp = (np.arange(hop) / hop).astype(values.dtype if values.dtype.kind == "f" else np.float64)
    nxt = np.concatenate([values[..., 1:], values[..., -1:]], axis=-1)
    out = values[..., :, None] + (nxt - values)[..., :, None] * ramp
    return out.reshape(values.shape[:-1] + (values.shape[-1] * hop,))


def _rfft_weights(n: int, bins: int, dtype) -> np.ndarray:
    w = np.full(bins, 0.5, dtype=dtype)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    return w


# ---------------------------------------------------------------------------
# differentiable primitives
# ---------------------------------------------------------------------------


def rfft(x, n: int | None = None) -> Tensor:
    """Real FFT over the last axis (zero-padded or truncated to ``n``)."""
    x = as_tensor(x)
    length = x.shape[-1]
    n = length if n is None else int(n)
    out = sfft.rfft(x.data, n=n, axis=-1)

    def fn(g):
        w = _rfft_weights(n, g.shape[-1], g.real.dtype)
        gx = sfft.irfft(g * w, n=n, axis=-1) * n
        if length <= n:
            gx = gx[..., :length]
        else:
            gx = np.concatenate([gx, np.zeros(gx.shape[:-1] + (length - n,), gx.dtype)], axis=-1)
        return (gx,)

    return _make(out, (x,), fn)


def irfft(spec, n: int) -> Tensor:
    """Inverse real FFT over the last axis producing ``n`` samples."""
    spec = as_tensor(spec)
    bins = n // 2 + 1
    if spec.shape[-1] != bins:
        raise ValueError(f"irfft of length {n} needs {bins} bins, got {spec.shape[-1]}")
    out = sfft.irfft(spec.data, n=n, axis=-1)

    def fn(g):
        w = 1.0 / _rfft_weights(n, bins, g.dtype)
        return (sfft.rfft(g, n=n, axis=-1) * (w / n),)

    return _make(out, (spec,), fn)


def frame(x, size: int, hop: int) -> Tensor:
    """Differentiable framing; the adjoint is overlap-add."""
    x = as_tensor(x)
    length = x.shape[-1]
    out = frame_array(x.data, size, hop)
    return _make(out, (x,), lambda g: (overlap_add_array(g, hop, length),))


def overlap_add(frames, hop: int) -> Tensor:
    """Differentiable overlap-add of ``(..., n_frames, size)`` frames."""
    frames = as_tensor(frames)
    if frames.ndim < 2 or frames.shape[-2] == 0:
        raise ValueError("overlap_add needs at least one frame")
    size = frames.shape[-1]
    return _make(overlap_add_array(frames.data, hop), (frames,), lambda g: (frame_array(g, size, hop),))


def upsample_linear(values, hop: int) -> Tensor:
    """Frame-rate to sample-rate linear interpolation.

    Output sample ``i * hop`` equals frame ``i``; the last frame is held for
    the final ``hop`` samples, so ``N`` frames yield ``N * hop`` samples.
    """
    values = as_tensor(values)
    n = values.shape[-1]
    if n < 2:
        raise ValueError("upsample_linear needs at least 2 frames")
    out = upsample_linear_array(values.data, hop)

    def fn(g):
        ramp = (np.arange(hop) / hop).astype(g.dtype)
        gr = g.reshape(g.shape[:-1] + (n, hop))
        gv = (gr * (1.0 - ramp)).sum(-1)
        gn = (gr * ramp).sum(-1)
        gv[..., 1:] += gn[..., :-1]
        gv[..., -1] += gn[..., -1]
        return (gv,)

    return _make(out, (values,), fn)


def conv1d(x, weight, bias=None) -> Tensor:
    """'Same' 1-D convolution along frames.

    Parameters
    ----------
    x : Tensor, shape (B, N, C_in)
    weight : Tensor, shape (K, C_in, C_out)
    bias : Tensor, shape (C_out,), optional
    """
    x = as_tensor(x)
    weight = as_tensor(weight, like=x)
    k, cin, cout = weight.shape
    b, n, _ = x.shape
    left = (k - 1) // 2
    xp = np.pad(x.data, ((0, 0), (left, k - 1 - left), (0, 0)))
    cols = sliding_window_view(xp, k, axis=1).transpose(0, 1, 3, 2).reshape(b, n, k * cin)
    w2 = weight.data.reshape(k * cin, cout)
    out = cols @ w2
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias, like=x)
        out = out + bias.data
        parents.append(bias)

    def fn(g):
        gw = gb = gx = None
        if weight.requires_grad:
            gw = (cols.reshape(-1, k * cin).T @ g.reshape(-1, cout)).reshape(k, cin, cout)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 1))
        if x.requires_grad:
            gc = (g @ w2.T).reshape(b, n, k, cin)
            gp = np.zeros(xp.shape, dtype=g.dtype)
            for j in range(k):
                gp[:, j : j + n] += gc[:, :, j]
            gx = gp[:, left : left + n]
        return (gx, gw, gb) if bias is not None else (gx, gw)

    return _make(out, parents, fn)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), fn)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale and shift."""
    x = as_tensor(x)
    centered = x - mean(x, axis=-1, keepdims=True)
    var = mean(centered * centered, axis=-1, keepdims=True)
    return centered / sqrt(var + eps) * gamma + beta


def group_norm(x, groups: int, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Group normalisation of channel-last ``(B, N, C)`` input.

    Statistics are pooled over frames and the channels of each group.
    """
    x = as_tensor(x)
    b, n, c = x.shape
    if c % groups:
        raise ValueError(f"{c} channels do not split into {groups} groups")
    xg = x.reshape(b, n, groups, c // groups)
    centered = xg - mean(xg, axis=(1, 3), keepdims=True)
    var = mean(centered * centered, axis=(1, 3), keepdims=True)
    normed = (centered / sqrt(var + eps)).reshape(b, n, c)
    return normed * gamma + beta

