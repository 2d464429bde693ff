import struct
import wave

import numpy as np
import pytest

from sawsynth.audio_io import WavError, load_wav, resample, save_wav
from sawsynth.signal_core import AudioBuffer


def write_raw(path, data: bytes, channels=1, width=2, rate=24000):
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(channels)
        wf.setsampwidth(width)
        wf.setframerate(rate)
        wf.writeframes(data)


def tone(freq, rate, seconds=1.0, amp=0.5):
    t = np.arange(int(rate * seconds)) / rate
    return amp * np.sin(2 * np.pi * freq * t)


def dft_amplitude(x, freq, rate):
    """Single-bin DFT amplitude over a whole number of periods."""
    t = np.arange(len(x)) / rate
    return 2 * abs(np.sum(x * np.exp(-2j * np.pi * freq * t))) / len(x)


class TestWav:
    def test_sine_round_trip(self, tmp_path):
        x = tone(440, 24000)
        save_wav(tmp_path / "a.wav", AudioBuffer(x, 24000))
        back = load_wav(tmp_path / "a.wav")
        assert back.sample_rate == 24000
        assert len(back) == 24000
        assert np.max(np.abs(back.samples - x)) <= 1 / 32768

    def test_clipping_range(self, tmp_path):
        save_wav(tmp_path / "c.wav", AudioBuffer(np.array([-2.0, -1.0, 0.0, 1.0, 2.0]), 8000))
        back = load_wav(tmp_path / "c.wav").samples
        assert back.min() == -1.0
        assert back.max() == 32767 / 32768

    def test_stereo_takes_left(self, tmp_path):
        left = (np.arange(100) * 50).astype("<i2")
        right = -left
        write_raw(tmp_path / "s.wav", np.stack([left, right], 1).tobytes(), channels=2)
        with pytest.warns(UserWarning, match="2 channels"):
            out = load_wav(tmp_path / "s.wav")
        np.testing.assert_array_equal(out.samples, left / 32768)

    def test_empty_data_chunk(self, tmp_path):
        write_raw(tmp_path / "e.wav", b"")
        with pytest.raises(WavError, match="empty"):
            load_wav(tmp_path / "e.wav")

    def test_truncated_data(self, tmp_path):
        write_raw(tmp_path / "t.wav", np.zeros(1000, "<i2").tobytes())
        blob = (tmp_path / "t.wav").read_bytes()
        (tmp_path / "t.wav").write_bytes(blob[:-600])
        with pytest.raises(WavError, match="truncated"):
            load_wav(tmp_path / "t.wav")

    def test_truncated_header(self, tmp_path):
        (tmp_path / "h.wav").write_bytes(b"RIFF\x10\x00")
        with pytest.raises(WavError):
            load_wav(tmp_path / "h.wav")

    def test_24_bit_rejected(self, tmp_path):
        write_raw(tmp_path / "w.wav", b"\x00" * 300, width=3)
        with pytest.raises(WavError, match="24-bit"):
            load_wav(tmp_path / "w.wav")

    def test_not_a_wav(self, tmp_path):
        (tmp_path / "n.wav").write_bytes(b"OggS" + struct.pack("<I", 0) + b"\x00" * 40)
        with pytest.raises(WavError):
            load_wav(tmp_path / "n.wav")

    def test_no_temp_file_left(self, tmp_path):
        save_wav(tmp_path / "x.wav", AudioBuffer(np.zeros(10), 24000))
        assert [p.name for p in tmp_path.iterdir()] == ["x.wav"]


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------


class TestResample:
    def test_identity(self):
        a = AudioBuffer(np.random.default_rng(0).normal(size=500), 24000)
        assert resample(a, 24000) is a

    def test_sine_48k_to_24k(self):
        out = resample(AudioBuffer(tone(1000, 48000, 2.0), 48000), 24000)
        assert out.sample_rate == 24000 and len(out) == 48000
        x = out.samples[2400:-2400]  # 40 periods per 2400 samples, skip filter edges
        spec = np.abs(np.fft.rfft(x * np.hanning(len(x))))
        freqs = np.fft.rfftfreq(len(x), 1 / 24000)
        k = np.argmax(spec)
        a, b, c = np.log(spec[k - 1 : k + 2])
        peak = freqs[k] + 0.5 * (a - c) / (a - 2 * b + c) * (freqs[1] - freqs[0])
        assert abs(peak - 1000) / 1000 < 1e-3
        fund = dft_amplitude(x, 1000, 24000)
        harm = [dft_amplitude(x, 1000 * h, 24000) for h in range(2, 12)]
        thd = np.sqrt(np.sum(np.square(harm))) / fund
        assert thd < 0.005
        assert fund == pytest.approx(0.5, rel=1e-3)

    @pytest.mark.parametrize("freq", [12500.0, 14000.0, 17000.0, 21000.0])
    def test_above_nyquist_attenuated(self, freq):
        x = tone(freq, 48000, 1.0)
        y = resample(AudioBuffer(x, 48000), 24000).samples[1200:-1200]
        rms_in = np.sqrt(np.mean(x**2))
        rms_out = np.sqrt(np.mean(y**2))
        assert 20 * np.log10(rms_out / rms_in) <= -60

    def test_passband_ripple(self):
        for freq in (100.0, 1000.0, 4000.0, 8000.0, 10000.0):
            x = tone(freq, 48000, 1.0)
            y = resample(AudioBuffer(x, 48000), 24000).samples[1200:-1200]
            gain = dft_amplitude(y, freq, 24000) / 0.5
            assert abs(20 * np.log10(gain)) < 0.1

    def test_upsample_44k1(self):
        x = tone(440, 44100, 1.0)
        y = resample(AudioBuffer(x, 44100), 48000)
        assert len(y) == 48000
        assert dft_amplitude(y.samples[2400:-2400], 440, 48000) == pytest.approx(0.5, rel=2e-3)

    def test_bad_rate(self):
        with pytest.raises(ValueError):
            resample(AudioBuffer(np.zeros(10), 24000), 0)
