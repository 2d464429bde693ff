"""Training excerpts, the on-disk feature cache and a synthetic singer.

The synthetic singer renders pseudo-vocal phrases with :func:`sawsing_forward`
and stores every control it used in a JSON sidecar next to each WAV, so that
resynthesis can be checked against exact ground truth.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter1d

from .audio_io import load_wav, resample, save_wav
from .pitch import PitchConfig, PitchTrack, extract_pitch
from .signal_core import AnalysisConfig, AudioBuffer, MelSpectrogram, mel_spectrogram
from .synth import SynthConfig, SynthParams, sawsing_forward

__all__ = [
    "Excerpt",
    "SplitSpec",
    "FeatureCache",
    "make_excerpts",
    "SingerConfig",
    "generate_synthetic_singer",
    "load_sidecar",
    "params_from_sidecar",
    "render_sidecar",
]

EXCERPT_SECONDS = 2.0


@dataclass
class Excerpt:
    audio: AudioBuffer
    mel: MelSpectrogram
    pitch: PitchTrack
    source_file: str
    offset_s: float


@dataclass(frozen=True)
class SplitSpec:
    """Which files go to validation: explicit names win, otherwise a seeded
    random ``validation_fraction`` of the files (at least one when the
    fraction is positive and more than one file exists)."""

    validation_files: tuple = ()
    validation_fraction: float = 0.0
    seed: int = 0

    def validation_set(self, names: list[str]) -> set[str]:
        if self.validation_files:
            wanted = {Path(v).name for v in self.validation_files} | {Path(v).stem for v in self.validation_files}
            return {n for n in names if n in wanted or Path(n).stem in wanted}
        if self.validation_fraction <= 0 or len(names) < 2:
            return set()
        k = min(len(names) - 1, max(1, round(self.validation_fraction * len(names))))
        order = np.random.default_rng(self.seed).permutation(len(names))
        return {names[i] for i in order[:k]}


# ---------------------------------------------------------------------------
# feature cache
# ---------------------------------------------------------------------------


def default_cache_root() -> Path | None:
    root = os.environ.get("SAWSYNTH_CACHE")
    return Path(root) if root else None


class FeatureCache:
    """Content-addressed store at ``<root>/<config-hash>/<file-hash>.bin``.

    Entries are ``.npz`` archives written under a temporary name and renamed
    into place, so concurrent writers never expose partial files.
    """

    def __init__(self, root):
        self.root = Path(root)
        self.hits = 0
        self.misses = 0

    def path(self, config_hash: str, file_hash: str) -> Path:
        return self.root / config_hash / f"{file_hash}.bin"

    def get(self, config_hash: str, file_hash: str) -> dict[str, np.ndarray] | None:
        p = self.path(config_hash, file_hash)
        if not p.exists():
            self.misses += 1
            return None
        try:
            with np.load(p, allow_pickle=False) as z:
                out = {k: z[k] for k in z.files}
        except (OSError, ValueError):
            self.misses += 1
            return None
        self.hits += 1
        return out

    def put(self, config_hash: str, file_hash: str, arrays: dict[str, np.ndarray]) -> None:
        p = self.path(config_hash, file_hash)
        p.parent.mkdir(parents=True, exist_ok=True)
        buf = io.BytesIO()
        np.savez(buf, **arrays)
        tmp = p.with_name(f".{p.name}.{os.getpid()}.{id(buf)}.tmp")
        tmp.write_bytes(buf.getvalue())
        os.replace(tmp, p)


def _features_hash(config: AnalysisConfig, pitch: PitchConfig) -> str:
    blob = json.dumps(
        {"analysis": config.to_dict(), "pitch": asdict(pitch), "excerpt_s": EXCERPT_SECONDS}, sort_keys=True
    ).encode()
    return hashlib.sha256(blob).hexdigest()[:32]


def _excerpt_features(audio: np.ndarray, config: AnalysisConfig, pitch_config: PitchConfig, length: int):
    n = len(audio) // length
    mels, f0, voiced, per = [], [], [], []
    for i in range(n):
        crop = AudioBuffer(audio[i * length : (i + 1) * length], config.sample_rate)
        mels.append(mel_spectrogram(crop, config).values)
        track = extract_pitch(crop, config=pitch_config)
        f0.append(track.f0)
        voiced.append(track.voiced)
        per.append(track.periodicity)
    return {
        "mel": np.asarray(mels, dtype=np.float64).reshape(n, config.mel_bands, -1),
        "f0": np.asarray(f0, dtype=np.float64).reshape(n, -1),
        "voiced": np.asarray(voiced, dtype=bool).reshape(n, -1),
        "periodicity": np.asarray(per, dtype=np.float64).reshape(n, -1),
    }


def _file_excerpts(path: Path, config, pitch_config, cache, shift_rng):
    raw = path.read_bytes()
    audio = resample(load_wav(path), config.sample_rate).samples
    length = int(round(EXCERPT_SECONDS * config.sample_rate))
    n = len(audio) // length
    start = 0
    if shift_rng is not None and len(audio) > n * length:
        start = int(shift_rng.integers(0, len(audio) - n * length + 1))
    audio = audio[start : start + n * length]
    file_hash = hashlib.sha256(raw + (f"@{start}".encode() if start else b"")).hexdigest()[:32]
    cfg_hash = _features_hash(config, pitch_config)
    feats = cache.get(cfg_hash, file_hash) if cache is not None else None
    if feats is None:
        feats = _excerpt_features(audio, config, pitch_config, length)
        if cache is not None:
            cache.put(cfg_hash, file_hash, feats)
    out = []
    for i in range(n):
        out.append(
            Excerpt(
                audio=AudioBuffer(audio[i * length : (i + 1) * length], config.sample_rate),
                mel=MelSpectrogram(feats["mel"][i], config),
                pitch=PitchTrack(feats["f0"][i], feats["voiced"][i], feats["periodicity"][i], pitch_config.hop, config.sample_rate),
                source_file=path.name,
                offset_s=(start + i * length) / config.sample_rate,
            )
        )
    return out


def make_excerpts(folder, config: AnalysisConfig | None = None, split_spec: SplitSpec | None = None,
                  cache: FeatureCache | None = None, random_offsets: bool = False, seed: int = 0,
                  workers: int = 1) -> tuple[list[Excerpt], list[Excerpt]]:
    """Crop every WAV in ``folder`` into consecutive 2 s excerpts.

    Files are resampled to ``config.sample_rate``; a trailing partial window
    is dropped. With ``random_offsets`` the grid of each file is shifted by a
    seeded random amount inside the leftover tail. ``cache`` defaults to
    ``$SAWSYNTH_CACHE`` when that is set.

    Returns
    -------
    (train, validation) lists, ordered by file name then offset.

    Raises
    ------
    FileNotFoundError
        If the folder holds no WAV files.
    """
    config = config or AnalysisConfig()
    split_spec = split_spec or SplitSpec()
    if cache is None and default_cache_root() is not None:
        cache = FeatureCache(default_cache_root())
    paths = sorted(Path(folder).glob("*.wav"))
    if not paths:
        raise FileNotFoundError(f"no WAV files in {folder}")
    pitch_config = PitchConfig(hop=config.hop)
    rng = np.random.default_rng(seed) if random_offsets else None
    shift_rngs = [np.random.default_rng(s) for s in rng.integers(0, 2**63, len(paths))] if rng else [None] * len(paths)

    def work(args):
        return _file_excerpts(args[0], config, pitch_config, cache, args[1])

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            per_file = list(pool.map(work, zip(paths, shift_rngs)))
    else:
        per_file = [work(a) for a in zip(paths, shift_rngs)]
    held_out = split_spec.validation_set([p.name for p in paths])
    train, val = [], []
    for path, excerpts in zip(paths, per_file):
        (val if path.name in held_out else train).extend(excerpts)
    return train, val


# ---------------------------------------------------------------------------
# synthetic singer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SingerConfig:
    file_seconds: float = 20.0
    f0_range: tuple = (105.0, 380.0)
    peak: float = 0.8
    max_response: float = 1.9  # keep responses inside the estimator's output range
    breath_db: float = -50.0  # noise floor while singing
    gap_breath_db: float = -62.0
    synth: SynthConfig = field(default_factory=SynthConfig)


_UNIFORM_RMS = 1 / np.sqrt(3)


def _db(x):
    return 10.0 ** (np.asarray(x) / 20.0)


def _contours(rng: np.random.Generator, n: int, cfg: SingerConfig) -> dict:
    """Frame-rate control tracks for one file."""
    fps = cfg.synth.sample_rate / cfg.synth.hop
    lo, hi = np.log2(cfg.f0_range)
    log_f0 = np.zeros(n)
    voiced = np.zeros(n, bool)
    env = np.zeros(n)
    formants = np.zeros((n, 3, 3))  # (centre, sigma, gain) per formant
    burst = np.zeros(n)
    vib_rate = np.zeros(n)
    vib_depth = np.zeros(n)

    def vowel():
        return np.array([
            [rng.uniform(300, 850), rng.uniform(100, 180), 1.0],
            [rng.uniform(900, 2400), rng.uniform(110, 220), rng.uniform(0.4, 0.9)],
            [rng.uniform(2450, 3400), rng.uniform(130, 250), rng.uniform(0.2, 0.5)],
        ])

    current = rng.uniform(lo, hi)
    pos = int(rng.integers(10, 30))
    formants[:pos] = vowel()
    log_f0[:pos] = current
    while pos < n:
        phrase = min(n - pos, int(rng.uniform(1.5, 4.0) * fps))
        end = pos + phrase
        t = pos
        while t < end:
            note = min(end - t, int(rng.uniform(0.25, 0.8) * fps))
            step = rng.integers(-7, 8) / 12
            target = current + step if lo <= current + step <= hi else current - step
            target = float(np.clip(target, lo, hi))
            glide = min(note, int(rng.integers(3, 9)))
            ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(1, glide + 1) / glide)
            log_f0[t : t + glide] = current + (target - current) * ramp
            log_f0[t + glide : t + note] = target
            vib_rate[t : t + note] = rng.uniform(5.0, 6.5)
            onset = np.clip((np.arange(note) / fps - 0.15) / 0.2, 0.0, 1.0)
            vib_depth[t : t + note] = rng.uniform(15, 40) / 1200 * onset
            formants[t : t + note] = vowel()
            env[t : t + note] = rng.uniform(0.65, 1.0)
            if rng.random() < 0.4:
                width = int(rng.integers(3, 9))
                level = _db(rng.uniform(-30, -20)) / _UNIFORM_RMS
                seg = burst[t : t + width]
                seg[:] = level * np.hanning(width + 2)[1:-1][: len(seg)]
            current = target
            t += note
        voiced[pos:end] = True
        fade_in, fade_out = min(3, phrase), min(5, phrase)
        env[pos : pos + fade_in] *= np.arange(1, fade_in + 1) / (fade_in + 1)
        env[end - fade_out : end] *= np.arange(fade_out, 0, -1) / (fade_out + 1)
        pos = end
        gap = min(n - pos, int(rng.uniform(0.2, 0.7) * fps))
        log_f0[pos : pos + gap] = current  # held through the gap
        formants[pos : pos + gap] = formants[pos - 1]
        pos += gap

    # slow formant motion; smoothing applied to centres, widths and gains alike
    formants = uniform_filter1d(formants, size=9, axis=0, mode="nearest")
    env = uniform_filter1d(env, size=3, mode="nearest") * voiced
    phase = 2 * np.pi * np.cumsum(vib_rate) / fps
    f0 = 2.0 ** (log_f0 + vib_depth * np.sin(phase))
    breath = np.where(voiced, _db(cfg.breath_db), _db(cfg.gap_breath_db)) / _UNIFORM_RMS
    return {"f0": f0, "voiced": voiced, "envelope": env, "formants": formants, "breath": breath, "burst": burst}


def _responses(tracks: dict, synth: SynthConfig, scale: float = 1.0):
    sr = synth.sample_rate
    fh = np.arange(synth.harmonic_fir // 2 + 1) * sr / synth.harmonic_fir
    fn = np.arange(synth.noise_fir // 2 + 1) * sr / synth.noise_fir
    fm = np.asarray(tracks["formants"], dtype=float)
    centre, sigma, gain = (fm[:, None, :, i] for i in range(3))  # (N, 1, formant)
    bumps = gain * np.exp(-0.5 * ((fh[None, :, None] - centre) / sigma) ** 2)
    body = bumps.sum(-1) + 0.3 * np.exp(-fh / 1200.0) + 0.02  # glottal tilt keeps the fundamental audible
    psi_h = scale * np.asarray(tracks["envelope"])[:, None] * body
    tilt = 0.6 + 0.4 * fn / fn[-1]
    hiss = 1.0 / (1.0 + np.exp(-(fn - 3500.0) / 600.0))
    psi_n = scale * (np.asarray(tracks["breath"])[:, None] * tilt + np.asarray(tracks["burst"])[:, None] * hiss)
    return psi_h, psi_n


def load_sidecar(path) -> dict:
    """Read a ground-truth JSON sidecar; arrays come back as numpy."""
    return _parse_sidecar(Path(path).read_text())


def _parse_sidecar(text: str) -> dict:
    data = json.loads(text)
    for key in ("f0", "envelope", "formants", "breath", "burst"):
        data[key] = np.asarray(data[key], dtype=float)
    data["voiced"] = np.asarray(data["voiced"], dtype=bool)
    return data


def params_from_sidecar(sidecar: dict) -> SynthParams:
    synth = SynthConfig(**sidecar["synth"])
    psi_h, psi_n = _responses(sidecar, synth, sidecar["scale"])
    return SynthParams(np.asarray(sidecar["f0"], dtype=float), psi_h, psi_n)


def render_sidecar(sidecar: dict) -> np.ndarray:
    """Re-render the exact (unquantized) audio described by a sidecar."""
    y, _, _ = sawsing_forward(params_from_sidecar(sidecar), SynthConfig(**sidecar["synth"]), sidecar["noise_seed"])
    return y


def _file_lengths(total_frames: int, per_file: int, min_frames: int) -> list[int]:
    lengths = [per_file] * (total_frames // per_file)
    rest = total_frames - sum(lengths)
    if rest >= min_frames or not lengths:
        lengths.append(rest)
    else:
        lengths[-1] += rest
    return lengths


def generate_synthetic_singer(seed: int, minutes: float, out_dir, config: SingerConfig | None = None) -> list[Path]:
    """Render about ``minutes`` of pseudo-singing into ``out_dir``.

    Each ``singer_XXX.wav`` (16-bit, mono) comes with ``singer_XXX.json``
    holding per-frame f0, voicing, envelope, formant (centre, width, gain)
    triples, noise levels, the output scale and the noise seed. Output is
    scaled to ``config.peak`` unless that would push a filter response above
    ``config.max_response``. Gaps between
    phrases are unvoiced with f0 held at the last note. The same seed always
    gives byte-identical files.

    Returns
    -------
    Paths of the written WAV files.
    """
    if minutes <= 0:
        raise ValueError("minutes must be positive")
    config = config or SingerConfig()
    synth = config.synth
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fps = synth.sample_rate / synth.hop
    total = int(round(minutes * 60 * fps))
    per_file = int(round(config.file_seconds * fps))
    rng = np.random.default_rng(seed)
    written = []
    for idx, n in enumerate(_file_lengths(total, per_file, int(EXCERPT_SECONDS * fps))):
        tracks = _contours(rng, n, config)
        noise_seed = int(rng.integers(0, 2**31))
        sidecar = {
            "version": 1,
            "synth": synth.to_dict(),
            "noise_seed": noise_seed,
            "scale": 1.0,
            **{k: v.tolist() for k, v in tracks.items()},
        }
        raw = _parse_sidecar(json.dumps(sidecar))
        psi_max = max(np.max(r) for r in _responses(raw, synth))
        peak = np.max(np.abs(render_sidecar(raw)))
        sidecar["scale"] = float(min(config.peak / peak, config.max_response / psi_max))
        y = render_sidecar(_parse_sidecar(json.dumps(sidecar)))
        name = f"singer_{idx:03d}"
        save_wav(out / f"{name}.wav", AudioBuffer(y, synth.sample_rate))
        text = json.dumps(sidecar, sort_keys=True)
        tmp = out / f".{name}.json.tmp"
        tmp.write_text(text)
        os.replace(tmp, out / f"{name}.json")
        written.append(out / f"{name}.wav")
    manifest = {"seed": seed, "minutes": minutes, "files": [p.name for p in written], "frames": total}
    (out / "dataset.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))
    return written

