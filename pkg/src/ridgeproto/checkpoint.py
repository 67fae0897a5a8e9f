"""STF1 tensor container.

Layout (little-endian)::

    b"STF1"
    u32 tensor count
    per tensor: u16 name length, name (UTF-8), u32 rank, u32 dims[rank],
                float32 values row-major
    u32 CRC-32 (zlib) of every byte between the magic and the CRC
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backbone import ParameterStore
from .errors import ParseError, SchemaError
from .injector import BACKGROUND, AttributeTable
from .tensor import Tensor

MAGIC = b"STF1"
MODES = ("ridge", "mean")


def write_stf(path, tensors: dict[str, np.ndarray]) -> None:
    body = bytearray(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f4")
        if arr.ndim == 0:
            arr = arr.reshape(1)
        raw = name.encode("utf-8")
        body += struct.pack("<H", len(raw)) + raw
        body += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        body += arr.tobytes(order="C")
    crc = zlib.crc32(bytes(body))
    Path(path).write_bytes(MAGIC + bytes(body) + struct.pack("<I", crc))


def read_stf(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise SchemaError(f"{path}: not an STF1 container")
    if len(data) < 12:
        raise ParseError(f"{path}: truncated container")
    body, (crc,) = data[4:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise SchemaError(f"{path}: CRC mismatch")
    out: dict[str, np.ndarray] = {}
    try:
        (count,) = struct.unpack_from("<I", body, 0)
        pos = 4
        for _ in range(count):
            (n,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos : pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", body, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", body, pos)
            pos += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            out[name] = np.frombuffer(body, dtype="<f4", count=size, offset=pos).reshape(dims).astype(np.float32)
            pos += 4 * size
    except (struct.error, ValueError) as exc:
        raise ParseError(f"{path}: malformed container ({exc})") from None
    if pos != len(body):
        raise ParseError(f"{path}: {len(body) - pos} trailing bytes")
    return out


@dataclass
class Checkpoint:
    params: ParameterStore
    velocity: dict[str, np.ndarray] = field(default_factory=dict)
    episode: int = 0
    seed: int = 0
    mode: str = "ridge"
    attrs: AttributeTable | None = None

    def to_tensors(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name, t in self.params.items():
            out[f"param/{name}"] = t.data
        for name in sorted(self.velocity):
            out[f"velocity/{name}"] = self.velocity[name]
        out["meta/episode"] = np.array([self.episode])
        out["meta/seed"] = np.array([self.seed >> 16, self.seed & 0xFFFF])
        out["meta/mode"] = np.array([MODES.index(self.mode)])
        if self.attrs is not None:
            out[f"attr/{BACKGROUND}"] = self.attrs.background
            for name in self.attrs.names():
                out[f"attr/{name}"] = self.attrs.vector(name)
        return out

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray], dtype=np.float32) -> "Checkpoint":
        params, velocity, attrs = {}, {}, {}
        for key, arr in tensors.items():
            kind, _, name = key.partition("/")
            if kind == "param":
                params[name] = Tensor(arr.astype(dtype), requires_grad=True)
            elif kind == "velocity":
                velocity[name] = arr.astype(dtype)
            elif kind == "attr":
                attrs[name] = arr.astype(np.float64)
            elif kind != "meta":
                raise SchemaError(f"unexpected tensor {key!r}")
        for key in ("meta/episode", "meta/seed", "meta/mode"):
            if key not in tensors:
                raise SchemaError(f"checkpoint lacks {key}")
        if "conv0.kernel" not in params or "injector.rho" not in params:
            raise SchemaError("checkpoint lacks extractor parameters")
        table = None
        if attrs:
            if BACKGROUND not in attrs:
                raise SchemaError("checkpoint attributes lack a background vector")
            bg = attrs.pop(BACKGROUND)
            table = AttributeTable(background=bg, entries=attrs, normalize=False)
        hi, lo = (int(x) for x in tensors["meta/seed"])
        return cls(
            params=ParameterStore(params),
            velocity=velocity,
            episode=int(tensors["meta/episode"][0]),
            seed=(hi << 16) | lo,
            mode=MODES[int(tensors["meta/mode"][0])],
            attrs=table,
        )


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    write_stf(path, ckpt.to_tensors())


def load_checkpoint(path, dtype=np.float32) -> Checkpoint:
    return Checkpoint.from_tensors(read_stf(path), dtype=dtype)
