import numpy as np
import pytest

from sublm.checkpoint import MAGIC, Checkpoint
from sublm.errors import VocabMismatchError


def make_checkpoint(rng):
    return Checkpoint(
        config={"variant": "syl-sum", "d_s": 8},
        vocab_hashes={"words": "aa", "subwords": "bb"},
        epoch=3,
        best_val_ppl=123.456789012345,
        arrays={
            "e_s": rng.normal(size=(5, 3)),
            "lm.b": rng.normal(size=7),
            "scalarish": rng.normal(size=(1,)),
            "f32": rng.normal(size=(2, 2)).astype(np.float32),
        },
    )


class TestRoundtrip:
    def test_bitwise(self, tmp_path, rng):
        ckpt = make_checkpoint(rng)
        path = tmp_path / "m.ckpt"
        ckpt.save(path)
        loaded = Checkpoint.load(path)
        assert loaded.config == ckpt.config
        assert loaded.vocab_hashes == ckpt.vocab_hashes
        assert loaded.epoch == 3
        assert loaded.best_val_ppl == ckpt.best_val_ppl
        for name, arr in ckpt.arrays.items():
            assert loaded.arrays[name].dtype == arr.dtype
            assert np.array_equal(loaded.arrays[name], arr)

    def test_save_is_deterministic(self, tmp_path, rng):
        ckpt = make_checkpoint(rng)
        ckpt.save(tmp_path / "a.ckpt")
        ckpt.save(tmp_path / "b.ckpt")
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_magic_guard(self, tmp_path):
        path = tmp_path / "bogus.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError):
            Checkpoint.load(path)

    def test_magic_bytes_lead_the_file(self, tmp_path, rng):
        path = tmp_path / "m.ckpt"
        make_checkpoint(rng).save(path)
        assert path.read_bytes()[:4] == MAGIC


class TestVocabGuard:
    def test_matching_hashes_pass(self, rng):
        ckpt = make_checkpoint(rng)
        ckpt.verify_vocabs({"words": "aa", "subwords": "bb"})

    def test_mismatch_raises(self, rng):
        ckpt = make_checkpoint(rng)
        with pytest.raises(VocabMismatchError):
            ckpt.verify_vocabs({"words": "aa", "subwords": "XX"})
