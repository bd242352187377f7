"""LASN checkpoint container for networks and supernets.

Layout (all integers little-endian)::

    b"LASN"  u8 version  u8 flags  32-byte spec digest
    u16 len + UTF-8 assignment string ("a1-a2-...-an"; the capacity for supernets)
    [flags & SUPERNET] u8 n, then n x u16 slots per group
    u32 block count, then per block: u32 element count + float32 data
        (trainable parameters in declaration order)
    u32 block count, then per block: u32 element count + float32 data
        (batch-norm running mean and variance, in declaration order)
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from ..assignments import LayerAssignment
from .network import Network, SearchSpaceSpec, build_network

__all__ = ["CheckpointError", "MAGIC", "VERSION", "FLAG_SUPERNET", "dumps", "loads", "save", "load_into", "load_network"]

MAGIC = b"LASN"
VERSION = 1
FLAG_SUPERNET = 0x01


class CheckpointError(ValueError):
    pass


def _blocks(layers, store: str) -> list[np.ndarray]:
    out = []
    for layer in layers:
        d = getattr(layer, store)
        if store == "buffers":
            keys = [k for k in ("running_mean", "running_var") if k in d]
        else:
            keys = list(d)
        out.extend(d[k] for k in keys)
    return out


def dumps(spec: SearchSpaceSpec, assignment, layers, slots: tuple[int, ...] | None = None) -> bytes:
    buf = io.BytesIO()
    flags = FLAG_SUPERNET if slots is not None else 0
    buf.write(MAGIC + struct.pack("<BB", VERSION, flags) + spec.digest())
    text = str(LayerAssignment(assignment)).encode()
    buf.write(struct.pack("<H", len(text)) + text)
    if slots is not None:
        buf.write(struct.pack("<B", len(slots)) + struct.pack(f"<{len(slots)}H", *slots))
    for store in ("params", "buffers"):
        blocks = _blocks(layers, store)
        buf.write(struct.pack("<I", len(blocks)))
        for arr in blocks:
            flat = np.ascontiguousarray(arr, dtype="<f4").ravel()
            buf.write(struct.pack("<I", flat.size) + flat.tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint reading {what}: need {self.pos + n} bytes, have {len(self.data)}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def loads(data: bytes) -> dict:
    """Decode a checkpoint into its header fields and raw float32 blocks."""
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError("not a LASN checkpoint (bad magic)")
    version, flags = r.unpack("<BB", "header")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}, expected {VERSION}")
    digest = r.take(32, "spec digest")
    (alen,) = r.unpack("<H", "assignment length")
    assignment = LayerAssignment.parse(r.take(alen, "assignment").decode())
    slots = None
    if flags & FLAG_SUPERNET:
        (n,) = r.unpack("<B", "slot table")
        slots = r.unpack(f"<{n}H", "slot table")
    out = {"digest": digest, "assignment": assignment, "slots": slots}
    for store in ("params", "buffers"):
        (count,) = r.unpack("<I", f"{store} block count")
        blocks = []
        for _ in range(count):
            (size,) = r.unpack("<I", "block size")
            blocks.append(np.frombuffer(r.take(4 * size, f"{store} block"), dtype="<f4").copy())
        out[store] = blocks
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after checkpoint payload")
    return out


def load_into(decoded: dict, spec: SearchSpaceSpec, layers) -> None:
    """Copy decoded blocks into ``layers`` after checking the spec digest and shapes."""
    if decoded["digest"] != spec.digest():
        raise CheckpointError("checkpoint was written for a different search space")
    for store in ("params", "buffers"):
        targets = []
        for layer in layers:
            d = getattr(layer, store)
            keys = [k for k in ("running_mean", "running_var") if k in d] if store == "buffers" else list(d)
            targets.extend((d, k) for k in keys)
        blocks = decoded[store]
        if len(blocks) != len(targets):
            raise CheckpointError(f"checkpoint holds {len(blocks)} {store} blocks, network needs {len(targets)}")
        for (d, k), block in zip(targets, blocks):
            if block.size != d[k].size:
                raise CheckpointError(f"block {k}: {block.size} values, expected {d[k].size}")
            d[k] = block.reshape(d[k].shape).astype(d[k].dtype)


def save(net: Network, path) -> None:
    Path(path).write_bytes(dumps(net.spec, net.assignment, net.layers()))


def load_network(path, spec: SearchSpaceSpec) -> Network:
    decoded = loads(Path(path).read_bytes())
    if decoded["slots"] is not None:
        raise CheckpointError("file holds a supernet, not a network")
    net = build_network(spec, decoded["assignment"], seed=0)
    load_into(decoded, spec, net.layers())
    return net

