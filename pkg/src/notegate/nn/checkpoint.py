"""NGCK checkpoint files.

Layout (little-endian)::

    b"NGCK" | u16 version | u32 metadata length | metadata (UTF-8 JSON)
    | u32 tensor count | per tensor: u16 name length, name (UTF-8),
      u8 ndim, ndim x u32 dims, float32 payload

Tensors are the network parameters followed by its running buffers.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..io import FormatError
from .model import Network, build_network

MAGIC = b"NGCK"
VERSION = 1


@dataclass
class Checkpoint:
    architecture: str
    hyper: dict
    params: dict
    buffers: dict
    metadata: dict = field(default_factory=dict)
    version: int = VERSION

    @classmethod
    def from_network(cls, net: Network, metadata=None) -> "Checkpoint":
        return cls(net.architecture, dict(net.hyper),
                   {k: v.astype(np.float32) for k, v in net.params.items()},
                   {k: v.astype(np.float32) for k, v in net.buffers.items()},
                   dict(metadata or {}))

    def to_network(self, dtype=np.float32) -> Network:
        if self.version != VERSION:
            raise FormatError(f"checkpoint version {self.version} is not supported "
                              f"(expected {VERSION})")
        net = build_network(self.architecture, self.hyper, dtype=dtype)
        for store, src in ((net.params, self.params), (net.buffers, self.buffers)):
            missing = set(store) - set(src)
            if missing:
                raise FormatError(f"checkpoint lacks tensors {sorted(missing)}")
            for k in store:
                if src[k].shape != store[k].shape:
                    raise FormatError(f"tensor {k} has shape {src[k].shape}, "
                                      f"expected {store[k].shape}")
                store[k] = src[k].astype(dtype)
        return net

    def dumps(self) -> bytes:
        meta = dict(self.metadata)
        meta["architecture"] = self.architecture
        meta["hyper"] = self.hyper
        meta["buffers"] = sorted(self.buffers)
        blob = json.dumps(meta, sort_keys=True).encode("utf-8")
        parts = [MAGIC, struct.pack("<HI", self.version, len(blob)), blob]
        tensors = {**self.params, **self.buffers}
        parts.append(struct.pack("<I", len(tensors)))
        for name in sorted(self.params) + sorted(self.buffers):
            a = np.ascontiguousarray(tensors[name], dtype="<f4")
            nb = name.encode("utf-8")
            parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", a.ndim))
            parts.append(struct.pack(f"<{a.ndim}I", *a.shape))
            parts.append(a.tobytes())
        return b"".join(parts)

    @classmethod
    def loads(cls, buf: bytes) -> "Checkpoint":
        if buf[:4] != MAGIC:
            raise FormatError("not an NGCK checkpoint (bad magic)")
        try:
            return cls._parse(buf)
        except (struct.error, ValueError, KeyError) as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(f"corrupt NGCK checkpoint: {exc}") from exc

    @classmethod
    def _parse(cls, buf: bytes) -> "Checkpoint":
        version, mlen = struct.unpack_from("<HI", buf, 4)
        if version != VERSION:
            raise FormatError(f"checkpoint version {version} is not supported (expected {VERSION})")
        off = 10
        meta = json.loads(buf[off:off + mlen].decode("utf-8"))
        off += mlen
        (count,) = struct.unpack_from("<I", buf, off)
        off += 4
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off:off + nlen].decode("utf-8")
            off += nlen
            (ndim,) = struct.unpack_from("<B", buf, off)
            off += 1
            dims = struct.unpack_from(f"<{ndim}I", buf, off)
            off += 4 * ndim
            n = int(np.prod(dims, dtype=np.int64))
            tensors[name] = np.frombuffer(buf, "<f4", n, off).reshape(dims).copy()
            off += 4 * n
        if off != len(buf):
            raise FormatError(f"{len(buf) - off} trailing bytes after last tensor")
        buffer_names = set(meta.pop("buffers"))
        arch = meta.pop("architecture")
        hyper = meta.pop("hyper")
        params = {k: v for k, v in tensors.items() if k not in buffer_names}
        buffers = {k: v for k, v in tensors.items() if k in buffer_names}
        return cls(arch, hyper, params, buffers, meta, version)

    def save(self, path) -> None:
        Path(path).write_bytes(self.dumps())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.loads(Path(path).read_bytes())
