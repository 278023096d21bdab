"""Binary checkpoint: parameters, batch-norm statistics, configs and the fitted preprocessing.

Layout (little-endian)::

    b"RULC" | u32 version | u32 json length | JSON blob
    u32 tensor count | per tensor, in sorted-name order:
        u16 name length | utf-8 name | u32 rank | u32 dims... | float32 values
    32-byte sha256 of everything above
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ModelConfig, ParamStore, init_model
from .signal_prep import PreprocessModel

MAGIC = b"RULC"
VERSION = 1


class CheckpointFormatError(ValueError):
    pass


class CheckpointTruncatedError(OSError):
    pass


@dataclass
class Checkpoint:
    params: ParamStore
    preprocess: PreprocessModel
    config: ModelConfig
    metadata: dict = field(default_factory=dict)


def to_bytes(ckpt: Checkpoint) -> bytes:
    frozen = sorted(n for n, p in ckpt.params.params.items() if not p.trainable)
    blob = json.dumps(
        {
            "model_config": ckpt.config.to_dict(),
            "preprocess": ckpt.preprocess.to_dict(),
            "metadata": ckpt.metadata,
            "frozen": frozen,
        },
        sort_keys=True,
    ).encode()
    arrays = ckpt.params.state_arrays()
    parts = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob, struct.pack("<I", len(arrays))]
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f4")
        encoded = name.encode()
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(a.tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointTruncatedError(f"checkpoint truncated at byte {len(self.raw)} (needed {self.pos + n})")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def from_bytes(raw: bytes) -> Checkpoint:
    r = _Reader(raw)
    if r.take(4) != MAGIC:
        raise CheckpointFormatError("bad magic; not a checkpoint file")
    version, blob_len = r.unpack("<II")
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    blob_raw = r.take(blob_len)
    (count,) = r.unpack("<I")
    arrays = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8", errors="replace")
        (rank,) = r.unpack("<I")
        dims = r.unpack(f"<{rank}I") if rank else ()
        n = int(np.prod(dims, dtype=np.int64))
        arrays[name] = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(dims).astype(np.float32)
    body_end = r.pos
    digest = r.take(32)
    if hashlib.sha256(raw[:body_end]).digest() != digest:
        raise CheckpointFormatError("checksum mismatch; checkpoint is corrupted")
    if r.pos != len(raw):
        raise CheckpointFormatError("trailing bytes after checkpoint")
    try:
        blob = json.loads(blob_raw)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"unreadable JSON header: {exc}") from None

    cfg = ModelConfig.from_dict(blob["model_config"])
    params = init_model(cfg, seed=0)
    params.load_state_arrays(arrays)
    for name in blob.get("frozen", []):
        params.freeze(name)
    return Checkpoint(params, PreprocessModel.from_dict(blob["preprocess"]), cfg, blob.get("metadata", {}))


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    """Write atomically (temp file, then rename)."""
    path = Path(path)
    data = to_bytes(ckpt)
    tmp = path.with_name(path.name + ".partial")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    tmp.replace(path)
    return path


def load_checkpoint(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
