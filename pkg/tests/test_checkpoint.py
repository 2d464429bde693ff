import struct

import numpy as np
import pytest

from sawsynth.checkpoint import Checkpoint, CheckpointError, load_checkpoint, match_weights, save_checkpoint
from sawsynth.grad import AdamState
from sawsynth.network import ConformerLiteConfig, init_weights, weight_shapes


def small(backend="sawsing"):
    return ConformerLiteConfig(backend=backend, model_dim=8, heads=2, groups=2)


def make_ckpt(backend="sawsing"):
    cfg = small(backend)
    w = {k: t.data for k, t in init_weights(cfg, seed=3).items()}
    rng = np.random.default_rng(1)
    m = {k: rng.normal(size=v.shape).astype(v.dtype) for k, v in w.items()}
    v = {k: rng.random(v.shape).astype(v.dtype) for k, v in w.items()}
    return Checkpoint({"model": cfg.to_dict()}, w, AdamState(7, m, v), step=7, seeds={"init": 3})


class TestRoundTrip:
    def test_bit_exact(self, tmp_path):
        ck = make_ckpt()
        save_checkpoint(tmp_path / "a.ckpt", ck)
        back = load_checkpoint(tmp_path / "a.ckpt")
        assert back.step == 7 and back.optimizer.step == 7
        assert back.seeds == {"init": 3}
        assert back.config == ck.config
        for src, dst in ((ck.weights, back.weights), (ck.optimizer.m, back.optimizer.m), (ck.optimizer.v, back.optimizer.v)):
            assert set(src) == set(dst)
            for k in src:
                assert src[k].dtype == dst[k].dtype
                assert src[k].tobytes() == dst[k].tobytes()

    def test_save_load_save_identical(self, tmp_path):
        save_checkpoint(tmp_path / "a.ckpt", make_ckpt())
        save_checkpoint(tmp_path / "b.ckpt", load_checkpoint(tmp_path / "a.ckpt"))
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_header_layout(self, tmp_path):
        save_checkpoint(tmp_path / "a.ckpt", make_ckpt())
        blob = (tmp_path / "a.ckpt").read_bytes()
        assert blob[:4] == b"SWSG"
        assert struct.unpack("<I", blob[4:8])[0] == 1

    def test_big_endian_input_stored_little(self, tmp_path):
        w = {"x": np.arange(4, dtype=">f8")}
        save_checkpoint(tmp_path / "a.ckpt", Checkpoint({}, w))
        back = load_checkpoint(tmp_path / "a.ckpt").weights["x"]
        np.testing.assert_array_equal(back, np.arange(4.0))


class TestCorruption:
    def test_truncated_payload(self, tmp_path):
        save_checkpoint(tmp_path / "a.ckpt", make_ckpt())
        blob = (tmp_path / "a.ckpt").read_bytes()
        (tmp_path / "a.ckpt").write_bytes(blob[:-5])
        with pytest.raises(CheckpointError, match="payload"):
            load_checkpoint(tmp_path / "a.ckpt")

    def test_truncated_metadata(self, tmp_path):
        save_checkpoint(tmp_path / "a.ckpt", make_ckpt())
        (tmp_path / "a.ckpt").write_bytes((tmp_path / "a.ckpt").read_bytes()[:40])
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "a.ckpt")

    def test_bad_magic(self, tmp_path):
        save_checkpoint(tmp_path / "a.ckpt", make_ckpt())
        blob = bytearray((tmp_path / "a.ckpt").read_bytes())
        blob[:4] = b"XXXX"
        (tmp_path / "a.ckpt").write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(tmp_path / "a.ckpt")

    def test_bad_version(self, tmp_path):
        save_checkpoint(tmp_path / "a.ckpt", make_ckpt())
        blob = bytearray((tmp_path / "a.ckpt").read_bytes())
        blob[4:8] = struct.pack("<I", 99)
        (tmp_path / "a.ckpt").write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(tmp_path / "a.ckpt")

    def test_rejects_integer_arrays(self, tmp_path):
        with pytest.raises(CheckpointError):
            save_checkpoint(tmp_path / "a.ckpt", Checkpoint({}, {"i": np.arange(3)}))


class TestMatch:
    def test_same_backend(self):
        ck = make_ckpt()
        match_weights(ck.weights, weight_shapes(small()))

    def test_cross_backend_names_head(self):
        ck = make_ckpt("sawsing")
        with pytest.raises(CheckpointError, match="head 'amplitude'"):
            match_weights(ck.weights, weight_shapes(small("ddsp-add")))

    def test_dim_mismatch(self):
        ck = make_ckpt()
        with pytest.raises(CheckpointError, match="prenet.conv.w"):
            match_weights(ck.weights, weight_shapes(small().with_(model_dim=16, heads=2, groups=2)))
