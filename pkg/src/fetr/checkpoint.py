"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"FETR"  u32 version
    u32 n    n bytes of canonical JSON metadata (spec, epoch, rng state, extras)
    u32 count, then `count` tensor records      (model tensors, sorted by name)
    u32 count, then `count` tensor records      (optimizer buffers, sorted by name)
    u32 crc32 of everything above

    tensor record: u16 name length, UTF-8 name, u8 dtype code, u8 rank,
                   rank x u32 extents, row-major little-endian payload
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backbone import Network, NetworkSpec, build_network
from .errors import CheckpointError
from .layers import named_tensors
from .training import OptimizerState

MAGIC = b"FETR"
VERSION = 1

_DTYPE_CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2, np.dtype("<i8"): 3}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


@dataclass
class Checkpoint:
    spec: NetworkSpec
    tensors: dict  # name -> ndarray
    optimizer: dict = field(default_factory=dict)  # buffer name -> ndarray
    optimizer_kind: str = "adam"
    optimizer_step: int = 0
    epoch: int = 0
    rng_state: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


def _pack_records(records: dict) -> bytes:
    out = [struct.pack("<I", len(records))]
    for name in sorted(records):
        arr = np.asarray(records[name])
        dt = arr.dtype.newbyteorder("<")
        if dt not in _DTYPE_CODES:
            raise CheckpointError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<BB", _DTYPE_CODES[dt], arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint at byte {self.pos} (wanted {n} more)")
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def records(self) -> dict:
        (count,) = self.unpack("<I")
        out = {}
        for _ in range(count):
            (nlen,) = self.unpack("<H")
            name = self.take(nlen).decode("utf-8")
            code, rank = self.unpack("<BB")
            if code not in _CODE_DTYPES:
                raise CheckpointError(f"unknown dtype code {code} for tensor {name!r}")
            shape = self.unpack(f"<{rank}I") if rank else ()
            dt = _CODE_DTYPES[code]
            n = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            out[name] = np.frombuffer(self.take(n), dtype=dt).reshape(shape).copy()
        return out


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    meta = {
        "spec": ckpt.spec.to_dict(),
        "epoch": ckpt.epoch,
        "optimizer_kind": ckpt.optimizer_kind,
        "optimizer_step": ckpt.optimizer_step,
        "rng_state": ckpt.rng_state,
        "extra": ckpt.extra,
    }
    meta_raw = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(
        [
            MAGIC,
            struct.pack("<I", VERSION),
            struct.pack("<I", len(meta_raw)),
            meta_raw,
            _pack_records(ckpt.tensors),
            _pack_records(ckpt.optimizer),
        ]
    )
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def decode_checkpoint(buf: bytes) -> Checkpoint:
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise CheckpointError("bad checkpoint header")
    r = _Reader(buf)
    r.take(4)
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version} (this build reads version {VERSION})")
    (mlen,) = r.unpack("<I")
    try:
        meta = json.loads(r.take(mlen).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint metadata: {exc}") from None
    tensors = r.records()
    optimizer = r.records()
    (crc,) = r.unpack("<I")
    if zlib.crc32(buf[: r.pos - 4]) & 0xFFFFFFFF != crc:
        raise CheckpointError("checkpoint checksum mismatch")
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes after checkpoint")
    return Checkpoint(
        spec=NetworkSpec.from_dict(meta["spec"]),
        tensors=tensors,
        optimizer=optimizer,
        optimizer_kind=meta["optimizer_kind"],
        optimizer_step=meta["optimizer_step"],
        epoch=meta["epoch"],
        rng_state=meta["rng_state"],
        extra=meta["extra"],
    )


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(ckpt))
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    return decode_checkpoint(buf)


def snapshot(net: Network, state: OptimizerState = None, epoch: int = 0, rng_state=None, extra=None) -> Checkpoint:
    return Checkpoint(
        spec=net.spec,
        tensors={name: t.data.copy() for name, t in named_tensors(net)},
        optimizer={k: v.copy() for k, v in state.buffers.items()} if state else {},
        optimizer_kind=state.kind if state else "adam",
        optimizer_step=state.step if state else 0,
        epoch=epoch,
        rng_state=dict(rng_state or {}),
        extra=dict(extra or {}),
    )


def restore_network(ckpt: Checkpoint) -> Network:
    net = build_network(ckpt.spec, seed=0)
    expected = dict(named_tensors(net))
    if set(expected) != set(ckpt.tensors):
        missing = sorted(set(expected) - set(ckpt.tensors))[:3]
        extra = sorted(set(ckpt.tensors) - set(expected))[:3]
        raise CheckpointError(f"checkpoint tensors do not match the network (missing {missing}, unexpected {extra})")
    for name, t in expected.items():
        arr = ckpt.tensors[name]
        if arr.shape != t.shape:
            raise CheckpointError(f"tensor {name!r} has shape {arr.shape}, network expects {t.shape}")
        t.data = arr.astype(t.dtype, copy=True)
    return net


def restore_optimizer(ckpt: Checkpoint) -> OptimizerState:
    return OptimizerState(
        kind=ckpt.optimizer_kind,
        step=ckpt.optimizer_step,
        buffers={k: v.copy() for k, v in ckpt.optimizer.items()},
    )
