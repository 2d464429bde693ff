# %% [markdown]
# # The synthetic singer
#
# Training and evaluation run on generated singing whose controls are known
# exactly. Each WAV has a JSON sidecar with its f0 contour, voicing, formant
# tracks and noise levels, so the synthesizer can re-render it from ground
# truth. That makes oracle checks possible.

# %%
import tempfile
from pathlib import Path

import numpy as np

from sawsynth.audio_io import load_wav
from sawsynth.dataset import SingerConfig, generate_synthetic_singer, load_sidecar, render_sidecar
from sawsynth.losses import msstft_loss
from sawsynth.pitch import extract_pitch

out = Path(tempfile.mkdtemp())
paths = generate_synthetic_singer(seed=7, minutes=0.5, out_dir=out, config=SingerConfig(file_seconds=10.0))
print([p.name for p in paths])

# %% [markdown]
# ## What a sidecar holds

# %%
side = load_sidecar(paths[0].with_suffix(".json"))
voiced = side["voiced"]
print("frames:", len(voiced), " voiced fraction:", round(voiced.mean(), 2))
print("f0 range on voiced frames:", side["f0"][voiced].min().round(1), "-", side["f0"][voiced].max().round(1), "Hz")
print("first frame formants (centre, sigma, gain):")
print(side["formants"][0].round(1))

# %% [markdown]
# ## Re-rendering from ground truth
#
# The stored file is 16-bit PCM, so the re-render differs from it only by
# quantization. The spectral distance should be tiny.

# %%
audio = load_wav(paths[0])
print("MSSTFT(file, re-render) =", round(msstft_loss(audio.samples, render_sidecar(side)), 4))

# %% [markdown]
# ## Pitch tracking against the truth
#
# The pitch tracker supplies f0 targets during training. On frames that both
# the tracker and the sidecar call voiced, its error is a few cents.

# %%
track = extract_pitch(audio)
both = track.voiced & voiced
cents = 1200 * np.abs(np.log2(track.f0[both] / side["f0"][both]))
print(f"{both.sum()} frames, mean error {cents.mean():.1f} cents, 99th percentile {np.percentile(cents, 99):.1f}")
