"""Binary checkpoints: magic ``SLM1``, JSON header, named raw arrays.

Layout: 4 magic bytes, u32 header length, UTF-8 JSON header (format version,
config echo, vocabulary hashes, epoch, best validation perplexity), u32
array count, then per array: u16 name length, name, one dtype byte
('d' = float64, 'f' = float32), u8 ndim, u64 dims, raw little-endian data.
Saving and loading round-trips bit for bit.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import VocabMismatchError

MAGIC = b"SLM1"
FORMAT_VERSION = 1

_DTYPES = {b"d": np.dtype("<f8"), b"f": np.dtype("<f4")}
_TAGS = {np.dtype("float64"): b"d", np.dtype("float32"): b"f"}


@dataclass
class Checkpoint:
    """Named parameter arrays plus the header that recreates the model."""

    config: dict
    vocab_hashes: dict
    epoch: int
    best_val_ppl: float
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def header(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "config": self.config,
            "vocab_hashes": self.vocab_hashes,
            "epoch": self.epoch,
            "best_val_ppl": self.best_val_ppl,
        }

    def verify_vocabs(self, hashes: dict) -> None:
        if hashes != self.vocab_hashes:
            raise VocabMismatchError(
                "checkpoint was trained with a different vocabulary "
                f"(stored {self.vocab_hashes}, supplied {hashes})")

    def save(self, path) -> None:
        header = json.dumps(self.header(), sort_keys=True).encode("utf-8")
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<I", len(header)))
            f.write(header)
            f.write(struct.pack("<I", len(self.arrays)))
            for name, arr in self.arrays.items():
                tag = _TAGS[arr.dtype]
                encoded = name.encode("utf-8")
                f.write(struct.pack("<H", len(encoded)))
                f.write(encoded)
                f.write(tag)
                f.write(struct.pack("<B", arr.ndim))
                f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
                f.write(np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes())

    @staticmethod
    def load(path) -> "Checkpoint":
        with open(path, "rb") as f:
            if f.read(4) != MAGIC:
                raise ValueError(f"{path}: not a sublm checkpoint (bad magic)")
            (header_len,) = struct.unpack("<I", f.read(4))
            header = json.loads(f.read(header_len).decode("utf-8"))
            if header.get("format_version") != FORMAT_VERSION:
                raise ValueError(
                    f"{path}: unsupported checkpoint version {header.get('format_version')}")
            (count,) = struct.unpack("<I", f.read(4))
            arrays = {}
            for _ in range(count):
                (name_len,) = struct.unpack("<H", f.read(2))
                name = f.read(name_len).decode("utf-8")
                tag = f.read(1)
                if tag not in _DTYPES:
                    raise ValueError(f"{path}: unknown dtype tag {tag!r}")
                (ndim,) = struct.unpack("<B", f.read(1))
                shape = struct.unpack(f"<{ndim}Q", f.read(8 * ndim))
                dtype = _DTYPES[tag]
                size = int(np.prod(shape)) if shape else 1
                data = np.frombuffer(f.read(size * dtype.itemsize), dtype=dtype)
                arrays[name] = data.reshape(shape).copy()
        return Checkpoint(config=header["config"],
                          vocab_hashes=header["vocab_hashes"],
                          epoch=header["epoch"],
                          best_val_ppl=header["best_val_ppl"],
                          arrays=arrays)
