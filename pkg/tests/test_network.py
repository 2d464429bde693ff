import numpy as np
import pytest

from sawsynth import grad as G
from sawsynth.grad import Tensor
from sawsynth.network import (
    ConformerLiteConfig,
    conv_block,
    estimate_params,
    head_shapes,
    init_weights,
    param_count,
    positional_encoding,
    self_attention_block,
)

from fd import check

rng = np.random.default_rng(5)
TINY = ConformerLiteConfig(model_dim=8, heads=2, groups=2)


def f64(config, seed=0):
    return init_weights(config, seed, dtype=np.float64)


class TestConfig:
    def test_heads_must_divide_dim(self):
        with pytest.raises(ValueError):
            ConformerLiteConfig(model_dim=10, heads=4)

    def test_unknown_backend(self):
        with pytest.raises(ValueError, match="backend"):
            ConformerLiteConfig(backend="wavetable")

    @pytest.mark.parametrize("backend", ["sawsing", "ddsp-add"])
    def test_default_size_near_half_million(self, backend):
        n = param_count(ConformerLiteConfig(backend=backend))
        assert 0.4e6 <= n <= 0.6e6

    def test_count_matches_weights(self):
        w = init_weights(TINY)
        assert param_count(TINY) == sum(t.size for t in w.values())

    def test_round_trip_dict(self):
        assert ConformerLiteConfig.from_dict(TINY.to_dict()) == TINY


# ---------------------------------------------------------------------------
# blocks
# ---------------------------------------------------------------------------


class TestAttention:
    def test_uniform_rows_stay_identical(self):
        w = f64(TINY)
        x = np.tile(rng.normal(size=8), (1, 6, 1))
        out = self_attention_block(x, w, 0, TINY.heads).data
        np.testing.assert_allclose(out[0], np.tile(out[0, 0], (6, 1)), atol=1e-12)

    def test_single_frame_is_value_path_plus_ffn(self):
        w = {k: t.data for k, t in f64(TINY, 3).items()}
        x = rng.normal(size=(1, 1, 8))
        out = self_attention_block(x, {k: Tensor(v) for k, v in w.items()}, 0, 2).data

        def ln(v, g, b):
            c = v - v.mean(-1, keepdims=True)
            return c / np.sqrt((c**2).mean(-1, keepdims=True) + 1e-5) * g + b

        from scipy.special import erf

        p = "attn0."
        h = ln(x, w[p + "ln1.g"], w[p + "ln1.b"])
        y = x + (h @ w[p + "wv"] + w[p + "bv"]) @ w[p + "wo"] + w[p + "bo"]
        h = ln(y, w[p + "ln2.g"], w[p + "ln2.b"])
        a = h @ w[p + "ff1.w"] + w[p + "ff1.b"]
        ref = y + (0.5 * a * (1 + erf(a / np.sqrt(2)))) @ w[p + "ff2.w"] + w[p + "ff2.b"]
        np.testing.assert_allclose(out, ref, atol=1e-12)

    def test_preserves_frame_count(self):
        w = f64(TINY)
        assert self_attention_block(rng.normal(size=(2, 13, 8)), w, 1, 2).shape == (2, 13, 8)

    def test_gradient(self):
        w = f64(TINY, 1)
        names = ["attn0.wq", "attn0.wk", "attn0.ff1.w", "attn0.ln1.g"]
        x0 = rng.normal(size=(1, 4, 8))
        r = rng.normal(size=(1, 4, 8))

        def fn(x, *ps):
            ws = dict(w, **dict(zip(names, ps)))
            return (self_attention_block(x, ws, 0, 2) * r).sum()

        assert check(fn, [x0] + [w[n].data.copy() for n in names]) < 1e-4


class TestConvBlock:
    def test_constant_input_constant_interior(self):
        w = f64(TINY)
        x = np.tile(rng.normal(size=8), (1, 10, 1))
        out = conv_block(x, w, 0).data[0, 1:-1]
        np.testing.assert_allclose(out, np.tile(out[0], (8, 1)), atol=1e-12)

    def test_zero_weights_pass_through(self):
        w = f64(TINY)
        w["conv0.w"] = Tensor(np.zeros_like(w["conv0.w"].data))
        x = rng.normal(size=(1, 5, 8))
        np.testing.assert_array_equal(conv_block(x, w, 0).data, x)

    def test_gradient(self):
        w = f64(TINY, 2)
        x0 = rng.normal(size=(1, 4, 8))
        r = rng.normal(size=(1, 4, 8))

        def fn(x, k, b):
            return (conv_block(x, dict(w, **{"conv0.w": k, "conv0.b": b}), 0) * r).sum()

        assert check(fn, [x0, w["conv0.w"].data.copy(), w["conv0.b"].data.copy()]) < 1e-4


def test_positional_encoding_shape_and_first_row():
    pe = positional_encoding(7, 8)
    assert pe.shape == (7, 8)
    np.testing.assert_array_equal(pe[0], [0, 1] * 4)


# ---------------------------------------------------------------------------
# estimator
# ---------------------------------------------------------------------------


class TestEstimate:
    @pytest.mark.parametrize("backend", ["sawsing", "ddsp-add"])
    def test_shapes_and_ranges(self, backend):
        cfg = TINY.with_(backend=backend)
        p = estimate_params(rng.normal(size=(80, 37)), init_weights(cfg), cfg)
        assert p.f0.shape == (37,)
        assert np.all(p.f0.data > 0)
        assert p.noise_response.shape == (37, 41)
        assert np.all((p.noise_response.data > 0) & (p.noise_response.data < 2))
        if backend == "sawsing":
            assert p.harmonic_response.shape == (37, 129)
        else:
            assert p.harmonic_weights.shape == (37, 150)
            np.testing.assert_allclose(p.harmonic_weights.data.sum(-1), 1, atol=1e-5)
            assert p.amplitude.shape == (37,)

    def test_batched(self):
        w = f64(TINY)
        mel = rng.normal(size=(3, 80, 20))
        batch = estimate_params(mel, w, TINY)
        for i in range(3):
            np.testing.assert_allclose(batch.f0.data[i], estimate_params(mel[i], w, TINY).f0.data, rtol=1e-12)

    def test_zero_head_weights_give_constant_controls(self):
        w = f64(TINY)
        for name in head_shapes(TINY):
            w[f"head.{name}.w"] = Tensor(np.zeros_like(w[f"head.{name}.w"].data))
        p = estimate_params(rng.normal(size=(80, 15)), w, TINY)
        np.testing.assert_allclose(p.f0.data, 200.0)
        np.testing.assert_allclose(p.harmonic_response.data, 1.0)
        np.testing.assert_allclose(p.noise_response.data, 1.0)

    def test_deterministic(self):
        w = init_weights(TINY, 9)
        mel = rng.normal(size=(80, 12))
        a = estimate_params(mel, w, TINY)
        b = estimate_params(mel, w, TINY)
        assert a.harmonic_response.data.tobytes() == b.harmonic_response.data.tobytes()

    def test_wrong_band_count(self):
        with pytest.raises(ValueError, match="mel bands"):
            estimate_params(np.zeros((40, 10)), init_weights(TINY), TINY)

    def test_non_finite(self):
        w = f64(TINY)
        w["head.f0.b"] = Tensor(np.array([1e6]))
        with pytest.raises(FloatingPointError, match="non-finite"), np.errstate(over="ignore"):
            estimate_params(rng.normal(size=(80, 5)), w, TINY)

    def test_gradient_reaches_every_weight(self):
        w = f64(TINY)
        with G.Tape() as tape:
            p = estimate_params(rng.normal(size=(80, 6)), w, TINY)
            loss = p.f0.sum() + p.harmonic_response.sum() + p.noise_response.sum()
        tape.backward(loss)
        for name, t in w.items():
            assert np.any(t.grad), name
