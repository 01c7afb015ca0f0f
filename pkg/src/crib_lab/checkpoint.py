"""Single-file binary checkpoints: named arrays plus a JSON metadata blob.

Layout: 4 magic bytes, little-endian u32 format version, u64 header length,
UTF-8 JSON header, then the raw array payloads back to back in header order.
The header lists (name, dtype code, shape) for every array, sorted by name,
so files are reproducible byte for byte given identical contents.
"""

from __future__ import annotations

import json
import struct
from typing import Dict, Optional, Tuple

import numpy as np

MAGIC = b"CRLB"
VERSION = 1

_DTYPE_TO_CODE = {
    np.dtype(np.float32): "f4",
    np.dtype(np.float64): "f8",
    np.dtype(np.int64): "i8",
    np.dtype(np.uint64): "u8",
    np.dtype(np.uint8): "u1",
}
_CODE_TO_DTYPE = {v: k for k, v in _DTYPE_TO_CODE.items()}


class CheckpointError(RuntimeError):
    pass


def write_checkpoint(path, arrays: Dict[str, np.ndarray],
                     meta: Optional[dict] = None) -> None:
    entries = []
    payload = bytearray()
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        code = _DTYPE_TO_CODE.get(arr.dtype)
        if code is None:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        entries.append([name, code, list(arr.shape)])
        payload.extend(arr.tobytes())
    header = json.dumps({"arrays": entries, "meta": meta or {}},
                        sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", VERSION, len(header)))
        f.write(header)
        f.write(bytes(payload))


def read_checkpoint(path) -> Tuple[Dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"bad magic {magic!r}")
        version, header_len = struct.unpack("<IQ", f.read(12))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        header = json.loads(f.read(header_len).decode("utf-8"))
        arrays: Dict[str, np.ndarray] = {}
        for name, code, shape in header["arrays"]:
            dtype = _CODE_TO_DTYPE.get(code)
            if dtype is None:
                raise CheckpointError(f"{name}: unknown dtype code {code}")
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            raw = f.read(count * dtype.itemsize)
            if len(raw) != count * dtype.itemsize:
                raise CheckpointError(f"{name}: truncated payload")
            arrays[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
        return arrays, header["meta"]
