"""Model checkpoints: a versioned binary container.

Layout (all integers little-endian):
  magic  8 bytes  b"SEQ2CKPT"
  u32    format version (1)
  u32    header length, then that many bytes of UTF-8 JSON metadata
         (vocabularies, copy settings)
  u32    parameter count, then per parameter:
    u16  name length, name bytes
    u8   ndim, then ndim u32 dims
    row-major float64 values, little-endian
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .corpus import Vocabulary
from .neural import Model, ModelParams

MAGIC = b"SEQ2CKPT"
VERSION = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(model, path):
    header = {
        "input_vocab": list(model.input_vocab.tokens),
        "output_vocab": list(model.output_vocab.tokens),
        "use_copy": model.use_copy,
        "copy_disallow_prefixes": list(model.config.copy_disallow_prefixes),
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(hbytes)))
        f.write(hbytes)
        items = list(model.params.items())
        f.write(struct.pack("<I", len(items)))
        for name, arr in items:
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                f.write(struct.pack("<I", dim))
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path, config=None):
    from .corpus import DomainConfig

    with open(path, "rb") as f:
        data = f.read()
    off = 0

    def take(n):
        nonlocal off
        chunk = data[off:off + n]
        if len(chunk) != n:
            raise CheckpointError("truncated checkpoint %s" % path)
        off += n
        return chunk

    if take(8) != MAGIC:
        raise CheckpointError("%s is not a checkpoint file" % path)
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise CheckpointError("unsupported checkpoint version %d" % version)
    (hlen,) = struct.unpack("<I", take(4))
    header = json.loads(take(hlen).decode("utf-8"))
    (count,) = struct.unpack("<I", take(4))
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = tuple(struct.unpack("<I", take(4))[0] for _ in range(ndim))
        size = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(take(size * 8), dtype="<f8").reshape(shape).copy()

    params = ModelParams(**arrays)
    if config is None:
        config = DomainConfig(
            copy_disallow_prefixes=tuple(header.get("copy_disallow_prefixes", ["_"])))
    return Model(
        params=params,
        input_vocab=Vocabulary(header["input_vocab"]),
        output_vocab=Vocabulary(header["output_vocab"]),
        config=config,
        use_copy=header.get("use_copy", True),
    )
