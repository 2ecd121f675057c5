"""Binary checkpoint formats.

Parameter file ("PRCK"): magic, u32 version=1, then per tensor:
u32 name length, UTF-8 name, u32 rank, u32 dims, little-endian float32
values in row-major order. The sibling moment file ("PRMO") adds a u32
Adam step count after the version, then stores `<name>.m` / `<name>.v`
entries in the same tensor layout. All integers are little-endian.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .optim import Adam

PARAM_MAGIC = b"PRCK"
MOMENT_MAGIC = b"PRMO"
VERSION = 1


def _write_entry(fh, name: str, values: np.ndarray):
    raw = name.encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<I", values.ndim))
    fh.write(struct.pack(f"<{values.ndim}I", *values.shape))
    fh.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def _read_exact(fh, n: int, path, what: str) -> bytes:
    offset = fh.tell()
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file while reading {what}", path=path, offset=offset)
    return buf


def _read_entry(fh, path):
    head = fh.read(4)
    if not head:
        return None
    if len(head) != 4:
        raise FormatError("truncated entry header", path=path, offset=fh.tell() - len(head))
    (name_len,) = struct.unpack("<I", head)
    name = _read_exact(fh, name_len, path, "tensor name").decode("utf-8")
    (rank,) = struct.unpack("<I", _read_exact(fh, 4, path, f"rank of {name}"))
    dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, path, f"dims of {name}"))
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    raw = _read_exact(fh, 4 * count, path, f"values of {name}")
    values = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32)
    return name, values


def _open_checked(path, magic: bytes):
    fh = open(path, "rb")
    got = fh.read(4)
    if got != magic:
        fh.close()
        raise FormatError(f"bad magic {got!r}, expected {magic!r}", path=path, offset=0)
    ver_raw = fh.read(4)
    if len(ver_raw) != 4:
        fh.close()
        raise FormatError("truncated version field", path=path, offset=4)
    (version,) = struct.unpack("<I", ver_raw)
    if version != VERSION:
        fh.close()
        raise FormatError(f"unsupported version {version}", path=path, offset=4)
    return fh


def save_tensors(path, named: dict[str, np.ndarray]):
    """Write named tensors as float32; entry order follows dict order."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(PARAM_MAGIC)
        fh.write(struct.pack("<I", VERSION))
        for name, values in named.items():
            _write_entry(fh, name, np.asarray(values))
    return path


def load_tensors(path) -> dict[str, np.ndarray]:
    with _open_checked(path, PARAM_MAGIC) as fh:
        out: dict[str, np.ndarray] = {}
        while True:
            entry = _read_entry(fh, path)
            if entry is None:
                return out
            name, values = entry
            if name in out:
                raise FormatError(f"duplicate tensor {name!r}", path=path)
            out[name] = values


def save_moments(path, adam: Adam):
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MOMENT_MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", adam.step_count))
        for p in adam.params:
            _write_entry(fh, p.name + ".m", adam.m[p.name])
            _write_entry(fh, p.name + ".v", adam.v[p.name])
    return path


def load_moments(path) -> tuple[int, dict[str, np.ndarray]]:
    with _open_checked(path, MOMENT_MAGIC) as fh:
        (step_count,) = struct.unpack("<I", _read_exact(fh, 4, path, "step count"))
        out: dict[str, np.ndarray] = {}
        while True:
            entry = _read_entry(fh, path)
            if entry is None:
                return step_count, out
            name, values = entry
            out[name] = values
