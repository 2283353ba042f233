"""Binary checkpoint persistence.

Layout (all integers little-endian):

    magic           4 bytes  b"SLFG"
    format version  u32
    config length   u32, then UTF-8 JSON: {"config": {...}, "meta": {...}}
    array count     u32
    per array:
        name length u16, name UTF-8
        dtype tag   u8  (1=float64, 2=float32, 3=int64, 4=int32)
        ndim        u8, then u32 per dimension
        payload     little-endian IEEE-754 / two's complement
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import CheckpointError
from .config import ModelConfig

MAGIC = b"SLFG"
VERSION = 1

_DTYPE_TAGS = {1: "<f8", 2: "<f4", 3: "<i8", 4: "<i4"}
_TAG_FOR = {np.dtype("float64"): 1, np.dtype("float32"): 2, np.dtype("int64"): 3, np.dtype("int32"): 4}


def save_checkpoint(
    params: dict[str, np.ndarray],
    config: ModelConfig,
    path,
    meta: dict | None = None,
) -> None:
    header = json.dumps(
        {"config": config.to_dict(), "meta": meta or {}}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(header)), header,
              struct.pack("<I", len(params))]
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name])
        if arr.dtype not in _TAG_FOR:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for array {name!r}")
        name_b = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<BB", _TAG_FOR[arr.dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype(_DTYPE_TAGS[_TAG_FOR[arr.dtype]], copy=False).tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise CheckpointError(
                f"truncated checkpoint: wanted {n} bytes at offset {self.off}, "
                f"file has {len(self.data)}"
            )
        out = self.data[self.off : self.off + n]
        self.off += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(
    path, expected_config: ModelConfig | None = None
) -> tuple[dict[str, np.ndarray], ModelConfig, dict]:
    """Load (params, config, meta); verifies magic, version, and optionally
    that the stored config matches an expected one."""
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise CheckpointError(f"bad magic header in {path}")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        doc = json.loads(r.take(r.u32()).decode("utf-8"))
        config = ModelConfig.from_dict(doc["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"malformed config block: {exc}") from None
    if expected_config is not None and config != expected_config:
        raise CheckpointError(
            f"checkpoint config {config.to_dict()} does not match expected "
            f"{expected_config.to_dict()}"
        )
    params: dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name = r.take(r.u16()).decode("utf-8")
        tag = r.u8()
        if tag not in _DTYPE_TAGS:
            raise CheckpointError(f"unknown dtype tag {tag} for array {name!r}")
        ndim = r.u8()
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
        dtype = np.dtype(_DTYPE_TAGS[tag])
        n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        params[name] = np.frombuffer(r.take(n_bytes), dtype=dtype).reshape(shape).copy()
    if r.off != len(r.data):
        raise CheckpointError(f"{len(r.data) - r.off} trailing bytes after arrays")
    return params, config, doc.get("meta", {})
