"""Reverse-mode automatic differentiation on numpy arrays."""

from .tensor import (
    Tape,
    Tensor,
    add,
    as_tensor,
    backward,
    concatenate,
    cos,
    cumsum,
    current_tape,
    detach,
    div,
    exp,
    gelu,
    getitem,
    log,
    matmul,
    mean,
    mul,
    neg,
    pad,
    power,
    real,
    relu,
    reshape,
    sigmoid,
    sin,
    sqrt,
    stack,
    sub,
    swapaxes,
    tabs,
    tanh,
    transpose,
    tsum,
    where,
)
from .ops import (
    conv1d,
    frame,
    group_norm,
    irfft,
    layer_norm,
    overlap_add,
    rfft,
    softmax,
    upsample_linear,
)
from .optim import Adam, AdamState, adam_step

__all__ = [
    "Tape", "Tensor", "add", "as_tensor", "backward", "concatenate", "cos", "cumsum",
    "current_tape", "detach", "div", "exp", "gelu", "getitem", "log", "matmul", "mean",
    "mul", "neg", "pad", "power", "real", "relu", "reshape", "sigmoid", "sin", "sqrt",
    "stack", "sub", "swapaxes", "tabs", "tanh", "transpose", "tsum", "where", "conv1d",
    "frame", "group_norm", "irfft", "layer_norm", "overlap_add", "rfft", "softmax",
    "upsample_linear", "Adam", "AdamState", "adam_step",
]
