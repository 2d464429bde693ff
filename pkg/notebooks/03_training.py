# %% [markdown]
# # Training a small estimator
#
# A miniature network learns to map mel frames to synthesizer controls. The
# run is tiny so it finishes in about a minute on one core; the acceptance
# suite trains a 64-channel model for much longer.

# %%
import tempfile
from pathlib import Path

from sawsynth.dataset import SingerConfig, generate_synthetic_singer, make_excerpts
from sawsynth.network import ConformerLiteConfig, param_count
from sawsynth.pipeline import evaluate
from sawsynth.training import RunConfig, load_model, train

work = Path(tempfile.mkdtemp())
data = work / "data"
generate_synthetic_singer(seed=1, minutes=0.5, out_dir=data, config=SingerConfig(file_seconds=10.0))

run = RunConfig(
    model=ConformerLiteConfig(model_dim=16, heads=2, groups=2, attn_layers=1, conv_layers=1),
    batch_size=4,
    learning_rate=0.005,
    validation_every=50,
    validation_files=("singer_002.wav",),
)
print("trainable parameters:", param_count(run.model))

# %% [markdown]
# ## Excerpts and split
#
# Files are cut into 2 s excerpts. Whole files go to validation so no
# excerpt leaks across the split.

# %%
train_set, val_set = make_excerpts(data, run.analysis, run.split)
print(len(train_set), "training excerpts,", len(val_set), "validation excerpts")

# %% [markdown]
# ## The loop
#
# Each step logs the spectral loss, the f0 loss and their sum. Validation
# runs every 50 steps, and the best checkpoint is kept alongside the latest.

# %%
result = train(
    run, None, work / "run", max_steps=150, excerpts=(train_set, val_set),
    progress=lambda row: row["val_msstft"] is not None and print(row["step"], round(row["val_msstft"], 3)),
)
print(f"validation MSSTFT {result.initial_val:.2f} -> {result.best_val:.2f} in {result.wall_s:.0f} s")

# %% [markdown]
# ## Evaluating the checkpoint
#
# `evaluate` resynthesizes every validation excerpt and reports the spectral
# distance and the pitch error of the output. Timing is skipped here because
# it is not repeatable. The spectral envelope is learned first; pitch
# accuracy takes many more steps, so the cents error of a run this short is
# still large.

# %%
run, weights = load_model(work / "run" / "best.ckpt")
print(evaluate(run, weights, val_set, timing=False)["metrics"])
