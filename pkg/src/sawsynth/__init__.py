"""Differentiable sawtooth-source singing vocoder."""

__version__ = "0.1.0"
