"""Binary checkpoint format, magic "ADSP4".

Layout: magic (5 bytes), format version u32, payload length u32, payload,
CRC32 of the payload u32. The payload holds the completed stage, the step
count, a JSON config snapshot, and a named tensor table (name, dtype tag
f32|f64, trainability flag, rank, shape, raw little-endian data).
Round-trips are bit-identical and the CRC is verified on load.
"""

from __future__ import annotations

import io
import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .config import ModelConfig
from .errors import FormatError
from .params import ParameterStore

MAGIC = b"ADSP4"
FORMAT_VERSION = 1
_DTYPES = {0: "<f4", 1: "<f8"}
_DTYPE_TAGS = {"float32": 0, "float64": 1}


@dataclass
class Checkpoint:
    stage: int
    step: int
    config: ModelConfig
    params: ParameterStore
    extras: dict = field(default_factory=dict)

    def save(self, path) -> None:
        buf = io.BytesIO()
        _write_str(buf, json.dumps(
            {"stage": self.stage, "step": self.step,
             "config": self.config.to_dict(), "extras": self.extras},
            sort_keys=True))
        buf.write(struct.pack("<I", len(self.params.tensors)))
        for name, arr in self.params.tensors.items():
            _write_str(buf, name)
            tag = _DTYPE_TAGS.get(arr.dtype.name)
            if tag is None:
                raise FormatError(f"tensor {name} has unsupported dtype {arr.dtype}")
            buf.write(struct.pack("<BBI", tag, int(self.params.trainable[name]),
                                  arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            buf.write(np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes())
        payload = buf.getvalue()
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<II", FORMAT_VERSION, len(payload)))
            f.write(payload)
            f.write(struct.pack("<I", zlib.crc32(payload)))

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, "rb") as f:
            raw = f.read()
        if raw[:5] != MAGIC:
            raise FormatError(f"{path}: bad magic {raw[:5]!r}")
        version, plen = struct.unpack("<II", raw[5:13])
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported format version {version}")
        if len(raw) != 13 + plen + 4:
            raise FormatError(f"{path}: truncated (expected {13 + plen + 4} bytes)")
        payload = raw[13 : 13 + plen]
        (crc,) = struct.unpack("<I", raw[13 + plen :])
        if zlib.crc32(payload) != crc:
            raise FormatError(f"{path}: CRC mismatch, checkpoint is corrupted")

        buf = io.BytesIO(payload)
        header = json.loads(_read_str(buf))
        params = ParameterStore()
        (count,) = struct.unpack("<I", buf.read(4))
        for _ in range(count):
            name = _read_str(buf)
            tag, trainable, rank = struct.unpack("<BBI", buf.read(6))
            shape = struct.unpack(f"<{rank}I", buf.read(4 * rank))
            n = int(np.prod(shape)) if rank else 1
            data = np.frombuffer(buf.read(n * int(_DTYPES[tag][-1])),
                                 dtype=_DTYPES[tag]).reshape(shape)
            params.tensors[name] = data.astype(np.float64) if tag == 0 else data.copy()
            params.trainable[name] = bool(trainable)
        return cls(stage=header["stage"], step=header["step"],
                   config=ModelConfig.from_dict(header["config"]),
                   params=params, extras=header.get("extras", {}))


def _write_str(buf, s: str) -> None:
    b = s.encode("utf-8")
    buf.write(struct.pack("<I", len(b)))
    buf.write(b)


def _read_str(buf) -> str:
    (n,) = struct.unpack("<I", buf.read(4))
    return buf.read(n).decode("utf-8")
