"""Binary "TPCK" checkpoint container shared by every trained component.

Layout (little-endian): magic ``TPCK``, u32 version, u32 entry count, then
per entry a u16-length UTF-8 name, a u8 dtype code (0 = f32, 1 = f64,
2 = u8), a u8 rank, one u32 per dimension and the raw payload.
"""
from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np
import torch

from .errors import DependencyError, InvalidArgument

MAGIC = b"TPCK"
VERSION = 1
_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1, np.dtype("u1"): 2}
_DTYPES = {code: dtype for dtype, code in _CODES.items()}


def encode(entries) -> bytes:
    """Serialize an ordered mapping of name -> array (or tensor)."""
    parts = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name, value in entries.items():
        if isinstance(value, torch.Tensor):
            value = value.detach().cpu().numpy()
        arr = np.asarray(value)
        if arr.dtype.kind == "f":
            arr = arr.astype("<f8" if arr.dtype == np.float64 else "<f4")
        elif arr.dtype == np.uint8:
            pass
        else:
            raise InvalidArgument(f"entry {name!r}: unsupported dtype {arr.dtype}")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_name)) + raw_name)
        parts.append(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def decode(blob: bytes) -> "OrderedDict[str, np.ndarray]":
    if blob[:4] != MAGIC:
        raise InvalidArgument("not a TPCK checkpoint")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise InvalidArgument(f"unsupported checkpoint version {version}")
    pos = 12
    entries = OrderedDict()
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        code, rank = struct.unpack_from("<BB", blob, pos)
        pos += 2
        shape = struct.unpack_from(f"<{rank}I", blob, pos)
        pos += 4 * rank
        dtype = _DTYPES[code]
        size = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        entries[name] = np.frombuffer(blob, dtype=dtype, count=size // dtype.itemsize, offset=pos).reshape(shape).copy()
        pos += size
    if pos != len(blob):
        raise InvalidArgument("trailing bytes after checkpoint entries")
    return entries


def save(path, entries) -> None:
    Path(path).write_bytes(encode(entries))


def load(path) -> "OrderedDict[str, np.ndarray]":
    path = Path(path)
    if not path.is_file():
        raise DependencyError(f"checkpoint {path} not found")
    return decode(path.read_bytes())


def module_entries(prefix: str, module: torch.nn.Module) -> "OrderedDict[str, np.ndarray]":
    return OrderedDict(
        (f"{prefix}/{name}", value.detach().cpu().numpy())
        for name, value in module.state_dict().items()
    )


def load_module(module: torch.nn.Module, entries, prefix: str) -> None:
    state = OrderedDict(
        (name[len(prefix) + 1 :], torch.as_tensor(value))
        for name, value in entries.items()
        if name.startswith(prefix + "/")
    )
    if not state:
        raise DependencyError(f"checkpoint has no {prefix!r} entries")
    module.load_state_dict(state)


def text_entry(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).copy()


def entry_text(value) -> str:
    return bytes(np.asarray(value, dtype=np.uint8)).decode("utf-8")


def json_entry(obj) -> np.ndarray:
    return text_entry(json.dumps(obj, sort_keys=True))


def entry_json(value):
    return json.loads(entry_text(value))
