"""Versioned binary checkpoint format.

Layout (little-endian)::

    b"INHS"  u32 version  u32 n_arrays
    per array: u16 name_len, name (UTF-8), u8 rank, rank x u32 dims,
               prod(dims) x f32 values
    u64 step
    u32 n_words, n_words x u64 RNG state words
    u32 config_len, config JSON (UTF-8)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .config import SystemConfig

MAGIC = b"INHS"
VERSION = 1
_MASK64 = (1 << 64) - 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    arrays: dict
    config: SystemConfig
    step: int = 0
    rng_state: list = field(default_factory=list)


def rng_state_words(rng: np.random.Generator) -> list:
    """Encode a PCG64 generator state as six 64-bit words."""
    st = rng.bit_generator.state
    if st["bit_generator"] != "PCG64":
        raise CheckpointError(f"cannot serialise {st['bit_generator']} state")
    s, inc = st["state"]["state"], st["state"]["inc"]
    return [s & _MASK64, s >> 64, inc & _MASK64, inc >> 64, st["has_uint32"], st["uinteger"]]


def rng_from_words(words) -> np.random.Generator:
    rng = np.random.default_rng()
    if len(words) != 6:
        raise CheckpointError(f"expected 6 RNG state words, got {len(words)}")
    rng.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": words[0] | (words[1] << 64), "inc": words[2] | (words[3] << 64)},
        "has_uint32": int(words[4]),
        "uinteger": int(words[5]),
    }
    return rng


def encode(ckpt: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(ckpt.arrays))]
    for name, arr in ckpt.arrays.items():
        arr = np.asarray(arr)
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_name)) + raw_name)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    parts.append(struct.pack("<Q", ckpt.step))
    words = list(ckpt.rng_state)
    parts.append(struct.pack("<I", len(words)) + struct.pack(f"<{len(words)}Q", *words))
    text = ckpt.config.to_json().encode("utf-8")
    parts.append(struct.pack("<I", len(text)) + text)
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint file")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if len(data) < 4 or r.take(4) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic bytes)")
    version, n_arrays = r.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    arrays = {}
    for _ in range(n_arrays):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I") if rank else ()
        count = int(np.prod(dims, dtype=np.int64))
        arrays[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(dims).astype(np.float32)
    (step,) = r.unpack("<Q")
    (n_words,) = r.unpack("<I")
    words = list(r.unpack(f"<{n_words}Q")) if n_words else []
    (text_len,) = r.unpack("<I")
    config = SystemConfig.from_json(r.take(text_len).decode("utf-8"))
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after checkpoint")
    return Checkpoint(arrays, config, step, words)


def save_checkpoint(path, ckpt: Checkpoint):
    with open(path, "wb") as fh:
        fh.write(encode(ckpt))


def load_checkpoint(path, expected: SystemConfig = None) -> Checkpoint:
    """Read a checkpoint; with ``expected``, verify array shapes against that config."""
    with open(path, "rb") as fh:
        ckpt = decode(fh.read())
    if expected is not None:
        check_shapes(ckpt, expected)
    return ckpt


def check_shapes(ckpt: Checkpoint, cfg: SystemConfig):
    from .model import build_model

    identity = not any(name.startswith("carn_") for name in ckpt.arrays)
    reference = build_model(cfg, identity_carns=identity)
    for name, param in reference.named_parameters():
        if name not in ckpt.arrays:
            raise CheckpointError(f"checkpoint lacks array {name!r} required by the configuration")
        if ckpt.arrays[name].shape != param.shape:
            raise CheckpointError(
                f"shape mismatch for array {name!r}: checkpoint {ckpt.arrays[name].shape}, "
                f"configuration expects {param.shape}"
            )


def model_from_checkpoint(ckpt: Checkpoint, dtype=np.float32):
    """Rebuild a model; a checkpoint without CARN arrays yields identity CARNs."""
    from .model import build_model

    identity = not any(name.startswith("carn_") for name in ckpt.arrays)
    model = build_model(ckpt.config, dtype=dtype, identity_carns=identity)
    try:
        model.load_arrays(ckpt.arrays)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from exc
    return model


def checkpoint_from_model(model, step=0, rng=None) -> Checkpoint:
    arrays = {name: np.asarray(p.data, dtype=np.float32).copy() for name, p in model.named_parameters()}
    words = rng_state_words(rng) if rng is not None else []
    return Checkpoint(arrays, model.cfg, step, words)
