"""Versioned checkpoint container: model config, vocabulary, named arrays.

Layout: magic line, 8-byte little-endian header length, canonical JSON
header (sorted keys), then raw array bytes in header order. Every field is
written deterministically, so save(load(path)) reproduces the file byte
for byte.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .model import ModelConfig
from .tokenizer import Vocabulary

MAGIC = b"SKILLSEQ-CKPT\n"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    arrays: dict          # name -> np.ndarray (params plus optimizer slots)
    vocab: Vocabulary
    meta: dict            # step, rng state, dataset names, ...

    def params(self):
        return {k: v for k, v in self.arrays.items() if not k.startswith("opt_")}

    def optimizer_arrays(self):
        return {k: v for k, v in self.arrays.items() if k.startswith("opt_")}


def save_checkpoint(path, config, arrays, vocab, meta=None):
    names = sorted(arrays)
    header = {
        "format": FORMAT_VERSION,
        "config": config.to_dict(),
        "vocab": vocab.to_text(),
        "meta": meta or {},
        "arrays": [[n, str(arrays[n].dtype), list(arrays[n].shape)] for n in names],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for n in names:
            arr = np.ascontiguousarray(arrays[n])
            if arr.dtype.byteorder == ">":
                arr = arr.astype(arr.dtype.newbyteorder("<"))
            fh.write(arr.tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header["format"] != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint format {header['format']}")
        arrays = {}
        for name, dtype, shape in header["arrays"]:
            n = int(np.prod(shape)) if shape else 1
            buf = fh.read(n * np.dtype(dtype).itemsize)
            arrays[name] = np.frombuffer(buf, dtype=dtype).reshape(shape).copy()
    return Checkpoint(
        config=ModelConfig.from_dict(header["config"]),
        arrays=arrays,
        vocab=Vocabulary.from_text(header["vocab"]),
        meta=header["meta"],
    )
