"""Versioned binary checkpoint container.

Layout: magic "TIVG", format version u32, then named sections in order
(config, state, rng, params, pca, optimizer). Every multi-byte integer is
little-endian; tensors are stored as raw little-endian values so a
round-trip restores parameters, optimizer moments and RNG streams
bit-exactly.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"TIVG"
VERSION = 1

_DTYPES = {0: "<f4", 1: "<f8"}
_DTYPE_CODES = {torch.float32: 0, torch.float64: 1}


class CheckpointFormatError(RuntimeError):
    pass


def _pack_str(buf: io.BytesIO, s: str) -> None:
    raw = s.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)


def _read_exact(fh, n: int) -> bytes:
    raw = fh.read(n)
    if len(raw) != n:
        raise CheckpointFormatError("truncated checkpoint file")
    return raw


def _unpack_str(fh) -> str:
    (n,) = struct.unpack("<I", _read_exact(fh, 4))
    return _read_exact(fh, n).decode("utf-8")


def pack_tensor(buf: io.BytesIO, t: torch.Tensor) -> None:
    t = t.detach().cpu().contiguous()
    code = _DTYPE_CODES.get(t.dtype)
    if code is None:
        raise CheckpointFormatError(f"unsupported tensor dtype {t.dtype}")
    buf.write(struct.pack("<BB", code, t.dim()))
    for d in t.shape:
        buf.write(struct.pack("<Q", d))
    raw = np.ascontiguousarray(t.numpy(), dtype=_DTYPES[code]).tobytes()
    buf.write(struct.pack("<Q", len(raw)))
    buf.write(raw)


def unpack_tensor(fh) -> torch.Tensor:
    code, ndim = struct.unpack("<BB", _read_exact(fh, 2))
    if code not in _DTYPES:
        raise CheckpointFormatError(f"unknown tensor dtype code {code}")
    shape = [struct.unpack("<Q", _read_exact(fh, 8))[0] for _ in range(ndim)]
    (nbytes,) = struct.unpack("<Q", _read_exact(fh, 8))
    arr = np.frombuffer(_read_exact(fh, nbytes), dtype=_DTYPES[code]).copy()
    return torch.from_numpy(arr.reshape(shape))


def pack_named_tensors(items: list[tuple[str, torch.Tensor]]) -> bytes:
    buf = io.BytesIO()
    buf.write(struct.pack("<I", len(items)))
    for name, t in items:
        _pack_str(buf, name)
        pack_tensor(buf, t)
    return buf.getvalue()


def unpack_named_tensors(raw: bytes) -> list[tuple[str, torch.Tensor]]:
    fh = io.BytesIO(raw)
    (n,) = struct.unpack("<I", _read_exact(fh, 4))
    return [(_unpack_str(fh), unpack_tensor(fh)) for _ in range(n)]


def pack_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True).encode("utf-8")


def unpack_json(raw: bytes):
    return json.loads(raw.decode("utf-8"))


def write_checkpoint(path: str | Path, sections: list[tuple[str, bytes]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        for name, payload in sections:
            buf = io.BytesIO()
            _pack_str(buf, name)
            fh.write(buf.getvalue())
            fh.write(struct.pack("<Q", len(payload)))
            fh.write(payload)
    tmp.replace(path)
    return path


def read_checkpoint(path: str | Path) -> dict[str, bytes]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointFormatError(f"checkpoint {path} does not exist")
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise CheckpointFormatError(
                f"{path} is not a checkpoint (bad magic {magic!r})"
            )
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != VERSION:
            raise CheckpointFormatError(
                f"checkpoint version {version} unsupported (expected {VERSION})"
            )
        sections: dict[str, bytes] = {}
        while True:
            head = fh.read(4)
            if not head:
                break
            (nlen,) = struct.unpack("<I", head)
            name = _read_exact(fh, nlen).decode("utf-8")
            (plen,) = struct.unpack("<Q", _read_exact(fh, 8))
            sections[name] = _read_exact(fh, plen)
    return sections
