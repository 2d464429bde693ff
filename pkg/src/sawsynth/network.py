"""Conformer-lite parameter estimator: mel frames in, synthesizer controls out.

Layout (all tensors channel-last, ``(B, N, D)``)::

    conv1d(k=3) -> group norm -> ReLU -> + sinusoidal positions
    3 x [pre-norm multi-head self-attention, pre-norm GELU feed-forward]
    2 x [conv1d -> GELU, residual] -> layer norm
    linear heads

Heads for the ``sawsing`` backend are f0, harmonic response and noise
response; ``ddsp-add`` replaces the harmonic response with an amplitude and
softmax harmonic weights.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import grad as G
from .grad import Tensor
from .signal_core import MelSpectrogram
from .synth import SynthParams

__all__ = [
    "BACKENDS",
    "ConformerLiteConfig",
    "init_weights",
    "head_shapes",
    "weight_shapes",
    "param_count",
    "positional_encoding",
    "self_attention_block",
    "conv_block",
    "estimate_params",
]

BACKENDS = ("sawsing", "ddsp-add")


@dataclass(frozen=True)
class ConformerLiteConfig:
    """Estimator hyperparameters.

    The default size (128 channels, 2x feed-forward) lands near half a million
    trainable parameters for either backend.
    """

    backend: str = "sawsing"
    n_mels: int = 80
    model_dim: int = 128
    heads: int = 4
    attn_layers: int = 3
    conv_layers: int = 2
    conv_kernel: int = 3
    prenet_kernel: int = 3
    ffn_mult: int = 2
    groups: int = 4
    harmonic_points: int = 129  # L_h / 2 + 1
    noise_points: int = 41  # L_n / 2 + 1
    n_harmonics: int = 150
    max_gain: float = 2.0
    f0_init: float = 200.0
    amplitude_init: float = 0.1

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown backend {self.backend!r}; choose from {BACKENDS}")
        if self.model_dim % self.heads:
            raise ValueError("model_dim must be divisible by heads")
        if self.model_dim % self.groups:
            raise ValueError("model_dim must be divisible by groups")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ConformerLiteConfig":
        return cls(**d)

    def with_(self, **changes) -> "ConformerLiteConfig":
        return replace(self, **changes)


# ---------------------------------------------------------------------------
# weights
# ---------------------------------------------------------------------------


def head_shapes(config: ConformerLiteConfig) -> dict[str, int]:
    """Output width of every head for the configured backend."""
    if config.backend == "sawsing":
        return {"f0": 1, "harmonic": config.harmonic_points, "noise": config.noise_points}
    return {"f0": 1, "amplitude": 1, "weights": config.n_harmonics, "noise": config.noise_points}


def weight_shapes(config: ConformerLiteConfig) -> dict[str, tuple]:
    d, f = config.model_dim, config.model_dim * config.ffn_mult
    s = {
        "prenet.conv.w": (config.prenet_kernel, config.n_mels, d),
        "prenet.conv.b": (d,),
        "prenet.norm.g": (d,),
        "prenet.norm.b": (d,),
    }
    for i in range(config.attn_layers):
        p = f"attn{i}."
        s.update({p + "ln1.g": (d,), p + "ln1.b": (d,)})
        for m in "qkvo":
            s.update({p + f"w{m}": (d, d), p + f"b{m}": (d,)})
        s.update({p + "ln2.g": (d,), p + "ln2.b": (d,)})
        s.update({p + "ff1.w": (d, f), p + "ff1.b": (f,), p + "ff2.w": (f, d), p + "ff2.b": (d,)})
    for i in range(config.conv_layers):
        s.update({f"conv{i}.w": (config.conv_kernel, d, d), f"conv{i}.b": (d,)})
    s.update({"post.ln.g": (d,), "post.ln.b": (d,)})
    for name, width in head_shapes(config).items():
        s.update({f"head.{name}.w": (d, width), f"head.{name}.b": (width,)})
    return s


def param_count(config: ConformerLiteConfig) -> int:
    """Number of trainable scalars."""
    return int(sum(np.prod(shape) for shape in weight_shapes(config).values()))


def init_weights(config: ConformerLiteConfig, seed: int = 0, dtype=np.float32) -> dict[str, Tensor]:
    """Glorot-uniform matrices, zero biases, unit norm gains.

    Head biases start at ``log(f0_init)`` for f0, 0 for the filter responses
    (unit gain) and ``log(amplitude_init)`` for the amplitude. Head matrices
    are scaled down so the initial controls are nearly constant.
    """
    rng = np.random.default_rng(seed)
    weights = {}
    for name, shape in weight_shapes(config).items():
        if name.endswith(".g"):
            value = np.ones(shape)
        elif len(shape) == 1:
            value = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[:-1]))
            limit = math.sqrt(6.0 / (fan_in + shape[-1]))
            value = rng.uniform(-limit, limit, size=shape)
            if name.startswith("head."):
                value *= 0.1
        weights[name] = value
    weights["head.f0.b"][:] = math.log(config.f0_init)
    if "head.amplitude.b" in weights:
        weights["head.amplitude.b"][:] = math.log(config.amplitude_init)
    return {k: Tensor(v.astype(dtype), requires_grad=True, name=k) for k, v in weights.items()}


# ---------------------------------------------------------------------------
# blocks
# ---------------------------------------------------------------------------


def _linear(x, weights, prefix):
    return G.matmul(x, weights[prefix + ".w"]) + weights[prefix + ".b"]


def positional_encoding(n_frames: int, dim: int) -> np.ndarray:
    """Sinusoidal positions, shape (n_frames, dim)."""
    pos = np.arange(n_frames)[:, None]
    rate = np.exp(-math.log(10000.0) * np.arange(0, dim, 2) / dim)
    pe = np.zeros((n_frames, dim))
    pe[:, 0::2] = np.sin(pos * rate)
    pe[:, 1::2] = np.cos(pos * rate[: dim // 2])
    return pe


def _attention(x, weights, prefix, heads):
    b, n, d = x.shape
    dh = d // heads

    def split(t):  # (B, N, D) -> (B, H, N, dh)
        return G.transpose(G.reshape(t, (b, n, heads, dh)), (0, 2, 1, 3))

    q = split(G.matmul(x, weights[prefix + "wq"]) + weights[prefix + "bq"])
    k = split(G.matmul(x, weights[prefix + "wk"]) + weights[prefix + "bk"])
    v = split(G.matmul(x, weights[prefix + "wv"]) + weights[prefix + "bv"])
    scores = G.matmul(q, G.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(dh))
    ctx = G.matmul(G.softmax(scores, axis=-1), v)
    merged = G.reshape(G.transpose(ctx, (0, 2, 1, 3)), (b, n, d))
    return G.matmul(merged, weights[prefix + "wo"]) + weights[prefix + "bo"]


def self_attention_block(x, weights: dict, index: int = 0, heads: int = 4) -> Tensor:
    """Pre-norm self-attention and feed-forward sublayers, each with a residual.

    ``x`` has shape (B, N, D); attention is unmasked over all N frames.
    """
    p = f"attn{index}."
    x = G.as_tensor(x)
    h = G.layer_norm(x, weights[p + "ln1.g"], weights[p + "ln1.b"])
    x = x + _attention(h, weights, p, heads)
    h = G.layer_norm(x, weights[p + "ln2.g"], weights[p + "ln2.b"])
    return x + _linear(G.gelu(_linear(h, weights, p + "ff1")), weights, p + "ff2")


def conv_block(x, weights: dict, index: int = 0) -> Tensor:
    """``x + GELU(conv1d(x))`` with 'same' padding along frames."""
    p = f"conv{index}."
    x = G.as_tensor(x)
    return x + G.gelu(G.conv1d(x, weights[p + "w"], weights[p + "b"]))


def _trunk(x, weights, config: ConformerLiteConfig) -> Tensor:
    h = G.conv1d(x, weights["prenet.conv.w"], weights["prenet.conv.b"])
    h = G.group_norm(h, config.groups, weights["prenet.norm.g"], weights["prenet.norm.b"])
    h = G.relu(h) + positional_encoding(x.shape[1], config.model_dim).astype(h.dtype)
    for i in range(config.attn_layers):
        h = self_attention_block(h, weights, i, config.heads)
    for i in range(config.conv_layers):
        h = conv_block(h, weights, i)
    return G.layer_norm(h, weights["post.ln.g"], weights["post.ln.b"])


def _mel_frames(mel, config: ConformerLiteConfig, dtype) -> tuple[Tensor, bool]:
    values = mel.values if isinstance(mel, MelSpectrogram) else mel
    values = values if isinstance(values, Tensor) else Tensor(np.asarray(values, dtype=dtype))
    single = values.ndim == 2
    if single:
        values = G.reshape(values, (1,) + values.shape)
    if values.shape[-2] != config.n_mels:
        raise ValueError(f"expected {config.n_mels} mel bands, got {values.shape[-2]}")
    return G.swapaxes(values, -1, -2), single


def estimate_params(mel, weights: dict, config: ConformerLiteConfig) -> SynthParams:
    """Map log-mel frames (M, N) or (B, M, N) to per-frame controls.

    The f0 output is ``exp`` of its head and is returned on the tape so that
    an f0 loss can train it; synthesizers only read its values. Filter
    responses are ``max_gain * sigmoid``; the additive backend's amplitude is
    ``exp`` and its harmonic weights a softmax over partials.

    Raises
    ------
    FloatingPointError
        If any output is not finite.
    """
    dtype = weights["prenet.conv.w"].dtype
    x, single = _mel_frames(mel, config, dtype)
    h = _trunk(x, weights, config)

    def head(name):
        out = _linear(h, weights, "head." + name)
        return G.reshape(out, out.shape[:-1]) if out.shape[-1] == 1 else out

    f0 = G.exp(head("f0"))
    noise = G.sigmoid(head("noise")) * config.max_gain
    if config.backend == "sawsing":
        params = SynthParams(f0, G.sigmoid(head("harmonic")) * config.max_gain, noise)
    else:
        params = SynthParams(f0, None, noise, G.exp(head("amplitude")), G.softmax(head("weights"), axis=-1))
    for name in ("f0", "harmonic_response", "noise_response", "amplitude", "harmonic_weights"):
        t = getattr(params, name)
        if t is None:
            continue
        if not np.all(np.isfinite(t.data)):
            raise FloatingPointError(f"non-finite activations in {name}")
        if single:
            setattr(params, name, t[0])
    return params
