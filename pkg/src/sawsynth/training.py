"""Run configuration, batching and the training loop."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import grad as G
from .checkpoint import Checkpoint, load_checkpoint, match_weights, save_checkpoint
from .dataset import Excerpt, SplitSpec, make_excerpts
from .grad import Tape, Tensor
from .losses import FFT_SIZES, LossBreakdown, f0_loss, msstft_loss
from .network import ConformerLiteConfig, estimate_params, init_weights, weight_shapes
from .signal_core import AnalysisConfig
from .synth import SynthConfig, SynthParams, ddsp_add_forward, sawsing_forward

__all__ = [
    "RunConfig",
    "Batch",
    "TrainResult",
    "TrainingDiverged",
    "make_batch",
    "synthesize",
    "compute_loss",
    "validate",
    "train",
    "load_model",
]

LOG_COLUMNS = ("step", "wall_s", "msstft", "f0_loss", "total", "val_msstft")


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce a training run, apart from the data."""

    model: ConformerLiteConfig = field(default_factory=ConformerLiteConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    batch_size: int = 16
    learning_rate: float = 0.002
    betas: tuple = (0.9, 0.999)
    f0_weight: float = 1.0
    fft_sizes: tuple = FFT_SIZES
    seed: int = 0
    dtype: str = "float32"
    validation_every: int = 500
    validation_files: tuple = ()
    validation_fraction: float = 0.1

    def __post_init__(self):
        if self.model.n_mels != self.analysis.mel_bands:
            raise ValueError("model and analysis disagree on the number of mel bands")
        if self.analysis.sample_rate != self.synth.sample_rate or self.analysis.hop != self.synth.hop:
            raise ValueError("analysis and synthesizer must share sample rate and hop")
        if self.model.harmonic_points != self.synth.harmonic_fir // 2 + 1:
            raise ValueError("harmonic head width must be harmonic_fir / 2 + 1")
        if self.model.noise_points != self.synth.noise_fir // 2 + 1:
            raise ValueError("noise head width must be noise_fir / 2 + 1")
        if self.model.n_harmonics != self.synth.max_harmonics:
            raise ValueError("harmonic weight head must match max_harmonics")
        if self.batch_size < 1 or self.validation_every < 1:
            raise ValueError("batch_size and validation_every must be positive")

    @property
    def split(self) -> SplitSpec:
        return SplitSpec(tuple(self.validation_files), self.validation_fraction, self.seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        d["fft_sizes"] = list(self.fft_sizes)
        d["validation_files"] = list(self.validation_files)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        d["model"] = ConformerLiteConfig.from_dict(d.get("model", {}))
        d["analysis"] = AnalysisConfig(**d.get("analysis", {}))
        d["synth"] = SynthConfig(**d.get("synth", {}))
        for key in ("betas", "fft_sizes", "validation_files"):
            if key in d:
                d[key] = tuple(d[key])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown run config keys: {sorted(unknown)}")
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def with_(self, **changes) -> "RunConfig":
        return replace(self, **changes)


# ---------------------------------------------------------------------------
# batches and the loss
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    mel: np.ndarray  # (B, M, N)
    audio: np.ndarray  # (B, T)
    f0: np.ndarray  # (B, N), reference pitch track
    voiced: np.ndarray  # (B, N)


def make_batch(excerpts: list[Excerpt], dtype=np.float32) -> Batch:
    return Batch(
        mel=np.stack([e.mel.values for e in excerpts]).astype(dtype),
        audio=np.stack([e.audio.samples for e in excerpts]).astype(dtype),
        f0=np.stack([e.pitch.f0 for e in excerpts]),
        voiced=np.stack([e.pitch.voiced for e in excerpts]),
    )


def synthesize(params: SynthParams, run: RunConfig, noise_seed=0, synth_f0=None):
    """Render ``(y, y_h, y_n)`` for the configured backend.

    ``synth_f0`` replaces the estimated f0 inside the synthesizer (the f0
    loss still sees the estimate). The synthesizer only ever reads f0 values,
    so no gradient flows from the audio back into the f0 head.
    """
    f0 = params.f0.data if isinstance(params.f0, Tensor) else np.asarray(params.f0)
    if synth_f0 is not None:
        f0 = np.broadcast_to(np.asarray(synth_f0, dtype=f0.dtype), f0.shape)
    params = replace(params, f0=f0)
    forward = sawsing_forward if run.model.backend == "sawsing" else ddsp_add_forward
    return forward(params, run.synth, noise_seed)


def compute_loss(weights: dict, batch: Batch, run: RunConfig, noise_seed=0, synth_f0=None,
                 use_f0_loss: bool = True) -> tuple[Tensor, LossBreakdown]:
    """Total training loss on the current tape and its float breakdown."""
    params = estimate_params(batch.mel, weights, run.model)
    y, _, _ = synthesize(params, run, noise_seed, synth_f0)
    spectral = msstft_loss(batch.audio.astype(y.dtype), y, run.fft_sizes)
    pitch = f0_loss(batch.f0, params.f0, batch.voiced)
    total = spectral + run.f0_weight * pitch if use_f0_loss else spectral
    return total, LossBreakdown(float(spectral.item()), float(pitch.item()))


def validate(weights: dict, excerpts: list[Excerpt], run: RunConfig) -> float:
    """Mean MSSTFT over ``excerpts`` with a fixed noise seed per chunk."""
    if not excerpts:
        return float("nan")
    dtype = np.dtype(run.dtype)
    total = 0.0
    for start in range(0, len(excerpts), run.batch_size):
        chunk = excerpts[start : start + run.batch_size]
        batch = make_batch(chunk, dtype)
        params = estimate_params(batch.mel, weights, run.model)
        y, _, _ = synthesize(params, run, noise_seed=np.random.default_rng([run.seed, 7, start]))
        total += msstft_loss(batch.audio, np.asarray(y.data if isinstance(y, Tensor) else y), run.fft_sizes) * len(chunk)
    return total / len(excerpts)


# ---------------------------------------------------------------------------
# loop
# ---------------------------------------------------------------------------


class TrainingDiverged(RuntimeError):
    """Raised on a non-finite loss or gradient; the latest checkpoint on disk
    holds the last finite weights."""


@dataclass
class TrainResult:
    steps: int
    initial_val: float
    best_val: float
    final_val: float
    wall_s: float
    history: list[dict]


def _checkpoint(run: RunConfig, weights: dict, opt: G.Adam, step: int, extra: dict) -> Checkpoint:
    return Checkpoint(
        config=run.to_dict(),
        weights={k: t.data for k, t in weights.items()},
        optimizer=opt.state,
        step=step,
        seeds={"run": run.seed},
        extra=extra,
    )


def _batches(n: int, size: int, rng: np.random.Generator):
    """Endless stream of index batches; every epoch is a fresh permutation."""
    order = np.empty(0, dtype=int)
    while True:
        while len(order) < size:
            order = np.concatenate([order, rng.permutation(n)])
        yield order[:size]
        order = order[size:]


def train(run: RunConfig, data_dir, out_dir, max_steps: int | None = None, max_hours: float | None = None,
          excerpts: tuple[list, list] | None = None, progress=None) -> TrainResult:
    """Train the estimator through the synthesizer.

    Writes ``run_config.json``, ``train_log.csv`` (appended), ``latest.ckpt``
    and ``best.ckpt`` (lowest validation MSSTFT) into ``out_dir``. Validation
    runs at step 0, every ``run.validation_every`` steps and at the end.
    ``max_steps=0`` stores the initial checkpoints only.

    Raises
    ------
    TrainingDiverged
        On a non-finite loss or gradient.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run.save(out / "run_config.json")
    train_set, val_set = excerpts if excerpts is not None else make_excerpts(data_dir, run.analysis, run.split)
    if not train_set:
        raise ValueError("no training excerpts")
    dtype = np.dtype(run.dtype)
    weights = init_weights(run.model, seed=run.seed, dtype=dtype)
    opt = G.Adam(weights, lr=run.learning_rate, betas=run.betas)
    rng = np.random.default_rng(run.seed)
    stream = _batches(len(train_set), min(run.batch_size, len(train_set)), rng)

    log_path = out / "train_log.csv"
    fresh = not log_path.exists()
    log = open(log_path, "a", newline="")
    writer = csv.writer(log)
    if fresh:
        writer.writerow(LOG_COLUMNS)
    history = []
    start = time.perf_counter()

    def record(step, losses=None, val=None):
        row = {
            "step": step,
            "wall_s": round(time.perf_counter() - start, 3),
            "msstft": losses.msstft if losses else None,
            "f0_loss": losses.f0_loss if losses else None,
            "total": losses.total if losses else None,
            "val_msstft": val,
        }
        history.append(row)
        writer.writerow(["" if row[c] is None else row[c] for c in LOG_COLUMNS])
        log.flush()
        if progress:
            progress(row)

    try:
        initial = best = validate(weights, val_set, run)
        record(0, val=initial)
        ckpt = _checkpoint(run, weights, opt, 0, {"val_msstft": initial})
        save_checkpoint(out / "latest.ckpt", ckpt)
        save_checkpoint(out / "best.ckpt", ckpt)
        val = initial
        step = 0
        while max_steps is None or step < max_steps:
            if max_hours is not None and time.perf_counter() - start >= max_hours * 3600:
                break
            idx = next(stream)
            batch = make_batch([train_set[i] for i in idx], dtype)
            noise = np.random.default_rng([run.seed, 1, step])
            opt.zero_grad()
            try:
                with Tape():
                    total, losses = compute_loss(weights, batch, run, noise)
                if not math.isfinite(losses.total):
                    raise FloatingPointError(f"non-finite loss at step {step + 1}")
                G.backward(total)
                opt.step()
            except FloatingPointError as exc:
                save_checkpoint(out / "latest.ckpt", _checkpoint(run, weights, opt, step, {"diverged": str(exc)}))
                raise TrainingDiverged(str(exc)) from exc
            step += 1
            val = None
            if step % run.validation_every == 0:
                val = validate(weights, val_set, run)
            record(step, losses, val)
            if val is not None:
                ckpt = _checkpoint(run, weights, opt, step, {"val_msstft": val})
                save_checkpoint(out / "latest.ckpt", ckpt)
                if val < best:
                    best = val
                    save_checkpoint(out / "best.ckpt", ckpt)
        if step and step % run.validation_every:
            val = validate(weights, val_set, run)
            record(step, None, val)
            ckpt = _checkpoint(run, weights, opt, step, {"val_msstft": val})
            save_checkpoint(out / "latest.ckpt", ckpt)
            if val < best:
                best = val
                save_checkpoint(out / "best.ckpt", ckpt)
    finally:
        log.close()
    final = val if val is not None else initial
    return TrainResult(step, initial, best, final, time.perf_counter() - start, history)


def load_model(path, backend: str | None = None) -> tuple[RunConfig, dict]:
    """Read a checkpoint into a run configuration and constant weight Tensors.

    ``backend`` names the backend the caller expects; loading a checkpoint
    trained for another backend fails naming the first mismatching head.
    """
    ckpt = load_checkpoint(path)
    run = RunConfig.from_dict(ckpt.config)
    expected = run if backend is None else run.with_(model=run.model.with_(backend=backend))
    match_weights(ckpt.weights, weight_shapes(expected.model))
    return run, {k: Tensor(v) for k, v in ckpt.weights.items()}
