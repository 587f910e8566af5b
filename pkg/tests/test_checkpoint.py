import struct
import zlib

import numpy as np
import pytest
import torch

from stressmon.checkpoint import load_checkpoint, save_checkpoint
from stressmon.errors import CorruptCheckpoint, IoFailure, VersionMismatch
from stressmon.model import ModelConfig, ReconstructionTransformer


def make_model(seed=0):
    cfg = ModelConfig(n_vars=2, window_len=4, patch_size=2, embed_dim=8,
                      n_blocks=2, n_heads=2, n_prompt=3, dyn_size=4, seed=seed)
    return ReconstructionTransformer(cfg)


class TestRoundTrip:
    def test_bit_exact_parameters(self, tmp_path):
        model = make_model(seed=9)
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        loaded, extras = load_checkpoint(path)
        assert extras == {}
        assert loaded.config == model.config
        for name, p in model.state_dict().items():
            assert torch.equal(p, loaded.state_dict()[name]), name

    def test_bit_exact_forward(self, tmp_path, rng):
        model = make_model(seed=1)
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        loaded, _ = load_checkpoint(path)
        x = torch.from_numpy(rng.standard_normal((3, 4, 2))).float()
        with torch.no_grad():
            assert torch.equal(model(x), loaded(x))

    def test_extras(self, tmp_path, rng):
        model = make_model()
        extras = {"norm_mean": rng.standard_normal(2).astype(np.float32),
                  "calib_scores": rng.uniform(0, 1, 50).astype(np.float32)}
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path, extras)
        _, back = load_checkpoint(path)
        assert set(back) == set(extras)
        for name in extras:
            np.testing.assert_array_equal(back[name], extras[name])

    def test_expected_config_match(self, tmp_path):
        model = make_model()
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        load_checkpoint(path, expected_config=model.config)  # no raise
        other = ModelConfig(n_vars=2, window_len=4, patch_size=2, embed_dim=16,
                            n_blocks=2, n_heads=2)
        with pytest.raises(VersionMismatch):
            load_checkpoint(path, expected_config=other)


class TestCorruption:
    def write(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(make_model(), path)
        return path, path.read_bytes()

    def test_truncation(self, tmp_path):
        path, blob = self.write(tmp_path)
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(CorruptCheckpoint):
            load_checkpoint(path)

    def test_flipped_byte(self, tmp_path):
        path, blob = self.write(tmp_path)
        bad = bytearray(blob)
        bad[len(bad) // 3] ^= 0xFF
        path.write_bytes(bytes(bad))
        with pytest.raises(CorruptCheckpoint):
            load_checkpoint(path)

    def test_bad_magic(self, tmp_path):
        path, blob = self.write(tmp_path)
        bad = b"XXXX" + blob[4:-4]
        path.write_bytes(bad + struct.pack("<I", zlib.crc32(bad)))
        with pytest.raises(CorruptCheckpoint):
            load_checkpoint(path)

    def test_unknown_version(self, tmp_path):
        path, blob = self.write(tmp_path)
        bad = blob[:4] + struct.pack("<I", 99) + blob[8:-4]
        path.write_bytes(bad + struct.pack("<I", zlib.crc32(bad)))
        with pytest.raises(VersionMismatch):
            load_checkpoint(path)

    def test_tiny_file(self, tmp_path):
        path = tmp_path / "m.ckpt"
        path.write_bytes(b"STMN")
        with pytest.raises(CorruptCheckpoint):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(IoFailure):
            load_checkpoint(tmp_path / "nope.ckpt")
