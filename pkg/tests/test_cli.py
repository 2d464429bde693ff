import json
import subprocess
import sys

import numpy as np
import pytest

from sawsynth.audio_io import load_wav, save_wav
from sawsynth.cli import main
from sawsynth.signal_core import AudioBuffer

from runs import tiny_run


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def initial_ckpt(tiny_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_train")
    tiny_run().save(out / "config.json")
    assert main(["train", "--config", str(out / "config.json"), "--data", str(tiny_dir), "--out", str(out), "--max-steps", "0"]) == 0
    return out / "latest.ckpt"


class TestVerbs:
    def test_param_count(self, capsys):
        code, out, _ = run_cli(capsys, "param-count")
        report = json.loads(out)
        assert code == 0 and report["backend"] == "sawsing"
        assert 0.4e6 <= report["param_count"] <= 0.6e6

    def test_gen_data(self, capsys, tmp_path):
        code, out, _ = run_cli(capsys, "gen-data", "--seed", 2, "--minutes", 0.05, "--out", tmp_path)
        assert code == 0
        assert len(load_wav(tmp_path / "singer_000.wav")) == 3 * 24000

    def test_train_zero_steps(self, initial_ckpt):
        out = initial_ckpt.parent
        assert initial_ckpt.exists() and (out / "best.ckpt").exists()
        assert json.loads((out / "run_config.json").read_text()) == tiny_run().to_dict()

    def test_analyze_then_synth_matches_resynth(self, capsys, tmp_path, tiny_dir, initial_ckpt):
        wav = tiny_dir / "singer_000.wav"
        assert run_cli(capsys, "analyze", wav, tmp_path / "m.melx")[0] == 0
        assert run_cli(capsys, "synth", initial_ckpt, tmp_path / "m.melx", tmp_path / "a.wav")[0] == 0
        assert run_cli(capsys, "resynth", initial_ckpt, wav, tmp_path / "b.wav")[0] == 0
        a, b = load_wav(tmp_path / "a.wav"), load_wav(tmp_path / "b.wav")
        assert len(a) == len(load_wav(wav))
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_oracle_resynth(self, capsys, tmp_path, tiny_dir, initial_ckpt):
        code, out, _ = run_cli(
            capsys, "resynth", initial_ckpt, tiny_dir / "singer_001.wav", tmp_path / "o.wav",
            "--oracle", tiny_dir / "singer_001.json",
        )
        metrics = json.loads(out)
        assert code == 0 and metrics["oracle"]
        assert metrics["msstft"] < 0.5
        assert metrics["mae_f0_cents"] < 20

    def test_eval_repeatable(self, capsys, tmp_path, tiny_dir, initial_ckpt):
        args = ("eval", initial_ckpt, tiny_dir, "--no-timing", "--seed", 4)
        first = json.loads(run_cli(capsys, *args)[1])
        second = json.loads(run_cli(capsys, *args)[1])
        assert first == second
        assert set(first["metrics"]) == {"msstft", "mae_f0_cents", "voiced_frames"}
        code, _, _ = run_cli(capsys, "eval", initial_ckpt, tiny_dir, "--out", tmp_path / "r.json")
        assert code == 0 and "rtf" in json.loads((tmp_path / "r.json").read_text())["timing"]


# ---------------------------------------------------------------------------
# failures
# ---------------------------------------------------------------------------


class TestErrors:
    def test_corrupt_mel_header_writes_nothing(self, capsys, tmp_path, tiny_dir, initial_ckpt):
        run_cli(capsys, "analyze", tiny_dir / "singer_000.wav", tmp_path / "m.melx")
        blob = bytearray((tmp_path / "m.melx").read_bytes())
        blob[1] ^= 0xFF
        (tmp_path / "m.melx").write_bytes(bytes(blob))
        code, _, err = run_cli(capsys, "synth", initial_ckpt, tmp_path / "m.melx", tmp_path / "out.wav")
        assert code != 0
        assert err.startswith("error: E_FORMAT:") and err.count("\n") == 1
        assert not (tmp_path / "out.wav").exists()

    def test_missing_checkpoint(self, capsys, tmp_path, tiny_dir):
        code, _, err = run_cli(capsys, "resynth", tmp_path / "nope.ckpt", tiny_dir / "singer_000.wav", tmp_path / "o.wav")
        assert code == 3 and err.startswith("error: E_IO:")

    def test_rate_mismatch(self, capsys, tmp_path, initial_ckpt):
        save_wav(tmp_path / "16k.wav", AudioBuffer(np.zeros(32000), 16000))
        code, _, err = run_cli(capsys, "resynth", initial_ckpt, tmp_path / "16k.wav", tmp_path / "o.wav")
        assert code == 5 and "sample-rate" in err

    def test_bad_usage(self, capsys):
        code, _, err = run_cli(capsys, "train", "--data", "x")
        assert code == 2 and err.startswith("error: E_USAGE:")

    def test_empty_data_dir(self, capsys, tmp_path):
        code, _, err = run_cli(capsys, "train", "--data", tmp_path, "--out", tmp_path / "o", "--max-steps", 0)
        assert code == 3 and "no WAV" in err

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "sawsynth", "param-count", "--backend", "ddsp-add"],
                              capture_output=True, text=True, check=False)
        assert proc.returncode == 0
        assert json.loads(proc.stdout)["backend"] == "ddsp-add"
