"""Small run configurations shared by the trainer, pipeline and CLI tests."""

from sawsynth.network import ConformerLiteConfig
from sawsynth.training import RunConfig


def tiny_run(backend="sawsing", **changes):
    model = ConformerLiteConfig(backend=backend, model_dim=8, heads=2, groups=2, attn_layers=1, conv_layers=1)
    base = dict(model=model, batch_size=2, validation_every=2, validation_files=("singer_001.wav",))
    base.update(changes)
    return RunConfig(**base)
