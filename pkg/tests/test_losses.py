import math
import time

import numpy as np
import pytest

from sawsynth import grad as G
from sawsynth.grad import Tensor
from sawsynth.losses import LossBreakdown, f0_loss, mae_f0_cents, msstft_loss, real_time_factor
from sawsynth.signal_core import AudioBuffer

from fd import check

rng = np.random.default_rng(21)


def msstft_oracle(y, y_hat):
    """Straightforward rewrite: explicit frame loop, numpy FFT."""
    total = 0.0
    for n in (128, 256, 512, 1024):
        hop = n // 4
        w = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)

        def mags(x):
            x = np.concatenate([x, x[::-1][1 : n - hop + 1]])
            return np.array(
                [np.abs(np.fft.rfft(x[i : i + n] * w)) for i in range(0, len(x) - n + 1, hop)]
            )

        s, t = mags(y), mags(y_hat)
        total += np.mean(np.abs(s - t)) + np.mean(np.abs(np.log(s + 1e-5) - np.log(t + 1e-5)))
    return total


class TestMsstft:
    def test_identical_is_zero(self):
        y = rng.normal(size=4800)
        assert msstft_loss(y, y) == 0.0

    def test_matches_oracle(self):
        y = rng.normal(size=12000) * 0.3
        y_hat = rng.normal(size=12000) * 0.2
        assert abs(msstft_loss(y, y_hat) - msstft_oracle(y, y_hat)) < 1e-9

    def test_symmetric_non_negative(self):
        a, b = rng.normal(size=(2, 3000))
        assert msstft_loss(a, b) == pytest.approx(msstft_loss(b, a), rel=1e-12)
        assert msstft_loss(a, b) > 0

    def test_decreases_toward_target(self):
        t = np.arange(24000) / 24000
        y = 0.5 * np.sin(2 * np.pi * 330 * t)
        losses = [msstft_loss(y, g * y) for g in (0.0, 0.25, 0.5, 0.75, 1.0)]
        assert all(a > b for a, b in zip(losses, losses[1:]))

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length mismatch"):
            msstft_loss(np.zeros(2000), np.zeros(2001))

    def test_sample_rate_mismatch(self):
        with pytest.raises(ValueError):
            msstft_loss(AudioBuffer(np.zeros(2000), 24000), AudioBuffer(np.zeros(2000), 16000))

    def test_batch_mean(self):
        y = rng.normal(size=(2, 2048))
        y_hat = rng.normal(size=(2, 2048))
        expected = 0.5 * (msstft_loss(y[0], y_hat[0]) + msstft_loss(y[1], y_hat[1]))
        assert msstft_loss(y, y_hat) == pytest.approx(expected, rel=1e-12)

    def test_gradient(self):
        y = rng.normal(size=96)
        y_hat0 = rng.normal(size=96)
        # small magnitudes inside the log need a finer stencil step
        assert check(lambda t: msstft_loss(y, t, fft_sizes=(16, 32)), [y_hat0], h=1e-4) < 1e-6


class TestF0Loss:
    def test_identical(self):
        f = rng.uniform(100, 400, 50)
        assert f0_loss(f, f, np.ones(50, bool)) == 0.0

    def test_octave(self):
        f = rng.uniform(100, 400, 50)
        assert abs(f0_loss(f, 2 * f, np.ones(50, bool)) - math.log(2)) < 1e-9

    def test_half_frames_hundred_cents(self):
        f = rng.uniform(100, 400, 40)
        pred = f.copy()
        pred[::2] *= 2 ** (100 / 1200)
        assert f0_loss(f, pred, np.ones(40, bool)) == pytest.approx(0.5 * 100 / 1200 * math.log(2), abs=1e-12)
        assert 0.5 * 100 / 1200 * math.log(2) == pytest.approx(0.02888, abs=1e-5)

    def test_unvoiced_frames_ignored(self):
        f = np.array([200.0, 0.0, 300.0])
        pred = np.array([200.0, 1234.0, 300.0])
        assert f0_loss(f, pred, f > 0) == 0.0

    def test_non_positive_in_mask(self):
        with pytest.raises(ValueError, match="non-positive"):
            f0_loss(np.array([100.0, 0.0]), np.array([100.0, 100.0]), np.array([True, True]))

    def test_tensor_matches_numpy_and_gradient(self):
        f = rng.uniform(100, 400, 12)
        pred = rng.uniform(100, 400, 12)
        mask = rng.random(12) > 0.3
        t = f0_loss(f, Tensor(pred), mask)
        assert t.item() == pytest.approx(f0_loss(f, pred, mask), rel=1e-12)
        assert check(lambda p: f0_loss(f, p, mask), [pred], h=1e-2) < 1e-6

    def test_transposition_invariant(self):
        f = rng.uniform(100, 400, 30)
        pred = f * rng.uniform(0.9, 1.1, 30)
        mask = np.ones(30, bool)
        assert f0_loss(3 * f, 3 * pred, mask) == pytest.approx(f0_loss(f, pred, mask), rel=1e-9)


class TestMaeCents:
    def test_identical(self):
        f = rng.uniform(100, 400, 10)
        assert mae_f0_cents(f, f, np.ones(10, bool)) == 0.0

    def test_semitone(self):
        f = rng.uniform(100, 400, 10)
        assert abs(mae_f0_cents(f, f * 2 ** (1 / 12), np.ones(10, bool)) - 100) < 1e-6

    def test_loop_oracle(self):
        f = rng.uniform(80, 800, 60)
        pred = f * 2 ** rng.normal(0, 0.3, 60)
        mask = rng.random(60) > 0.4
        vals = [1200 * abs(math.log2(p / t)) for t, p, m in zip(f, pred, mask) if m]
        assert mae_f0_cents(f, pred, mask) == pytest.approx(sum(vals) / len(vals), rel=1e-12)

    def test_transposition_invariant(self):
        f = rng.uniform(100, 400, 30)
        pred = f * rng.uniform(0.9, 1.1, 30)
        mask = np.ones(30, bool)
        assert mae_f0_cents(f * 1.7, pred * 1.7, mask) == pytest.approx(mae_f0_cents(f, pred, mask), rel=1e-9)


def test_breakdown_total():
    b = LossBreakdown(msstft=1.5, f0_loss=0.25)
    assert b.total == 1.75


class TestRtf:
    def test_sleeping_stub(self):
        def stub(seconds):
            time.sleep(0.1 * seconds)
            return np.zeros(int(24000 * seconds))

        report = real_time_factor(stub, 1.0, trials=3)
        assert report.audio_seconds == 1.0
        assert report.rtf == pytest.approx(0.1, abs=0.02)

    def test_scale_consistent(self):
        def work(seconds):
            time.sleep(0.05 * seconds)
            return np.zeros(int(24000 * seconds))

        short = real_time_factor(work, 1.0, trials=3)
        long = real_time_factor(work, 3.0, trials=3)
        assert long.audio_seconds == 3.0
        assert long.rtf == pytest.approx(short.rtf, rel=0.2)

    def test_needs_three_trials(self):
        with pytest.raises(ValueError):
            real_time_factor(lambda p: np.zeros(10), None, trials=2)
