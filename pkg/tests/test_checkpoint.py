"""Binary checkpoint round trips, integrity checks and forward equality."""

import struct

import numpy as np
import pytest
from conftest import toy_batch, toy_config, toy_params

from hycube.checkpoint import MAGIC, VERSION, load_checkpoint, save_checkpoint
from hycube.errors import CheckpointError
from hycube.model import forward, named_arrays, score_all_entities


def float32_params(**kw):
    cfg = toy_config(**kw)
    params = toy_params(cfg)
    # checkpoints persist 32-bit payloads; start from 32-bit to compare exactly
    for name, arr in named_arrays(params):
        arr[...] = arr.astype(np.float32)
    return params


class TestRoundTrip:
    def test_save_load_save_is_byte_identical(self, tmp_path):
        params = float32_params()
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(params, p1)
        again = load_checkpoint(p1)
        save_checkpoint(again, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_arrays_survive_exactly(self, tmp_path):
        params = float32_params()
        path = tmp_path / "m.ckpt"
        save_checkpoint(params, path)
        again = load_checkpoint(path)
        originals = dict(named_arrays(params))
        for name, arr in named_arrays(again):
            assert np.array_equal(arr, originals[name].astype(np.float32)), name

    def test_config_survives(self, tmp_path):
        params = float32_params(variant="hyplane", pad=2)
        path = tmp_path / "m.ckpt"
        save_checkpoint(params, path)
        again = load_checkpoint(path)
        assert again.config == params.config
        assert again.rel_kernels is not None

    def test_reloaded_model_scores_identically(self, tmp_path):
        params = toy_params()
        path = tmp_path / "m.ckpt"
        save_checkpoint(params, path)
        again = load_checkpoint(path)
        batch = toy_batch()
        v1, _ = forward(again, batch, training=False)
        v2, _ = forward(load_checkpoint(path), batch, training=False)
        assert np.array_equal(v1, v2)
        l1, _ = score_all_entities(again, v1)
        l2, _ = score_all_entities(load_checkpoint(path), v2)
        assert np.array_equal(l1, l2)


class TestIntegrity:
    def write(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(float32_params(), path)
        return path

    def test_flipped_payload_byte_fails_checksum(self, tmp_path):
        path = self.write(tmp_path)
        raw = bytearray(path.read_bytes())
        raw[len(raw) // 2] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="checksum"):
            load_checkpoint(path)

    def test_truncation_detected(self, tmp_path):
        path = self.write(tmp_path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 20])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_bad_magic(self, tmp_path):
        path = self.write(tmp_path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"NOPE"
        # keep the checksum consistent so the magic check itself fires
        import hashlib

        body = bytes(raw[:-8])
        path.write_bytes(body + hashlib.blake2b(body, digest_size=8).digest())
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_unsupported_version(self, tmp_path):
        path = self.write(tmp_path)
        raw = bytearray(path.read_bytes())
        raw[4:8] = struct.pack("<I", VERSION + 1)
        import hashlib

        body = bytes(raw[:-8])
        path.write_bytes(body + hashlib.blake2b(body, digest_size=8).digest())
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_shape_inconsistency_detected(self, tmp_path):
        params = float32_params()
        params.fc_bias = np.zeros(5, dtype=np.float32)  # wrong length on purpose
        path = tmp_path / "m.ckpt"
        save_checkpoint(params, path)
        with pytest.raises(CheckpointError, match="shape"):
            load_checkpoint(path)

    def test_magic_constant(self):
        assert MAGIC == b"HYCB"
