"""Versioned binary checkpoint container.

Layout (all integers little-endian):
    magic  b"STMN"
    u32    version (currently 1)
    u32    config JSON length, followed by the JSON bytes
    u32    number of tensors
    per tensor: u16 name length + UTF-8 name, u8 ndim, u32 dims...,
                float32 LE data
    u32    CRC32 of everything above

Parameters are stored and restored as float32, so a round trip is
bit-exact for float32 models.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np
import torch

from .errors import CorruptCheckpoint, IoFailure, VersionMismatch
from .model import ModelConfig, ReconstructionTransformer

MAGIC = b"STMN"
VERSION = 1


def _pack_tensor(name: str, array: np.ndarray) -> bytes:
    name_b = name.encode("utf-8")
    data = np.ascontiguousarray(array, dtype="<f4")
    parts = [struct.pack("<H", len(name_b)), name_b,
             struct.pack("<B", data.ndim)]
    parts += [struct.pack("<I", d) for d in data.shape]
    parts.append(data.tobytes())
    return b"".join(parts)


def save_checkpoint(model: ReconstructionTransformer, path,
                    extras: dict[str, np.ndarray] | None = None):
    """Serialize model config + parameters (+ named extra arrays)."""
    tensors = [(name, p.detach().cpu().numpy())
               for name, p in model.state_dict().items()]
    for name, arr in (extras or {}).items():
        tensors.append((f"extra/{name}", np.asarray(arr, dtype=np.float32)))

    config_b = model.config.to_json().encode("utf-8")
    body = [MAGIC, struct.pack("<I", VERSION),
            struct.pack("<I", len(config_b)), config_b,
            struct.pack("<I", len(tensors))]
    body += [_pack_tensor(name, arr) for name, arr in tensors]
    blob = b"".join(body)
    blob += struct.pack("<I", zlib.crc32(blob))
    try:
        with open(path, "wb") as fh:
            fh.write(blob)
    except OSError as exc:
        raise IoFailure(f"cannot write checkpoint: {exc}")


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CorruptCheckpoint("truncated checkpoint")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path, expected_config: ModelConfig | None = None
                    ) -> tuple[ReconstructionTransformer, dict[str, np.ndarray]]:
    """Rebuild a model from disk; returns (model, extras).

    Raises CorruptCheckpoint on truncation/bad checksum and VersionMismatch
    on unknown versions or a config differing from ``expected_config``.
    """
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read checkpoint: {exc}")

    if len(blob) < 12:
        raise CorruptCheckpoint("file too small")
    stored_crc = struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(blob[:-4]) != stored_crc:
        raise CorruptCheckpoint("checksum mismatch")

    r = _Reader(blob[:-4])
    if r.take(4) != MAGIC:
        raise CorruptCheckpoint("bad magic")
    version = r.u32()
    if version != VERSION:
        raise VersionMismatch(f"unsupported checkpoint version {version}")
    config = ModelConfig.from_json(r.take(r.u32()).decode("utf-8"))
    if expected_config is not None and config != expected_config:
        raise VersionMismatch("checkpoint config does not match requested config")

    n_tensors = r.u32()
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        name_len = struct.unpack("<H", r.take(2))[0]
        name = r.take(name_len).decode("utf-8")
        ndim = struct.unpack("<B", r.take(1))[0]
        shape = tuple(r.u32() for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape)
        tensors[name] = data.copy()
    if r.pos != len(r.blob):
        raise CorruptCheckpoint("trailing bytes in checkpoint")

    extras = {name[len("extra/"):]: arr for name, arr in tensors.items()
              if name.startswith("extra/")}
    params = {name: torch.from_numpy(arr) for name, arr in tensors.items()
              if not name.startswith("extra/")}

    model = ReconstructionTransformer(config)
    expected_names = set(model.state_dict().keys())
    if set(params.keys()) != expected_names:
        raise CorruptCheckpoint("parameter names do not match model config")
    model.load_state_dict(params)
    return model, extras
