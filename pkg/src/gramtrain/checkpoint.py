"""Binary checkpoint container.

Layout (all integers and floats little-endian)::

    magic        8 bytes   b"GRAMTRN\\0"
    version      u32       currently 1
    n_spaces     u32
    per space:   u64 vocab_size, u32 embed_dim
    n_hidden     u32
    hidden       u32 * n_hidden
    dim          u32       output dimension k
    tensors      f64 data of every parameter tensor in ModelParams.arrays()
                 order (tables, left W0 b0 W1 b1 ..., right ...); shapes are
                 implied by the header
    -- optional state section, absent if the file ends here --
    marker       4 bytes   b"STAT"
    meta_len     u64
    meta         meta_len bytes of UTF-8 JSON
    n_arrays     u32
    per array:   u16 name_len, name (UTF-8), u32 ndim, u64 * ndim shape, f64 data

Round trips are bit-exact: floats are written as raw IEEE-754 doubles.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from .errors import DataError
from .model import SIDES, ModelParams, TowerConfig

MAGIC = b"GRAMTRN\0"
VERSION = 1
STATE_MARKER = b"STAT"


def _pack_array(buf: list[bytes], a: np.ndarray) -> None:
    buf.append(np.ascontiguousarray(a, dtype="<f8").tobytes())


def dumps(params: ModelParams, meta: dict[str, Any] | None = None,
          arrays: dict[str, np.ndarray] | None = None) -> bytes:
    cfg = params.config
    buf = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(params.tables))]
    for t, d in zip(params.tables, cfg.embed_dims):
        buf.append(struct.pack("<QI", t.shape[0], d))
    buf.append(struct.pack("<I", len(cfg.hidden)))
    buf.append(struct.pack(f"<{len(cfg.hidden)}I", *cfg.hidden))
    buf.append(struct.pack("<I", cfg.dim))
    for a in params.arrays():
        _pack_array(buf, a)
    if meta is not None or arrays:
        meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
        buf += [STATE_MARKER, struct.pack("<Q", len(meta_bytes)), meta_bytes]
        arrays = arrays or {}
        buf.append(struct.pack("<I", len(arrays)))
        for name, a in arrays.items():
            a = np.asarray(a, dtype=np.float64)
            nb = name.encode()
            buf.append(struct.pack("<H", len(nb)) + nb + struct.pack("<I", a.ndim))
            buf.append(struct.pack(f"<{a.ndim}Q", *a.shape))
            _pack_array(buf, a)
    return b"".join(buf)


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data = data
        self.pos = 0
        self.source = source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DataError(f"{self.source}: truncated checkpoint at byte {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, shape) -> np.ndarray:
        count = int(np.prod(shape, dtype=np.int64))
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)

    @property
    def done(self) -> bool:
        return self.pos == len(self.data)


def loads(data: bytes, source: str = "<bytes>") -> tuple[ModelParams, dict | None, dict[str, np.ndarray]]:
    r = _Reader(data, source)
    if r.take(8) != MAGIC:
        raise DataError(f"{source}: not a gramtrain checkpoint")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise DataError(f"{source}: unsupported checkpoint version {version}")
    (n_spaces,) = r.unpack("<I")
    vocab, dims = [], []
    for _ in range(n_spaces):
        v, d = r.unpack("<QI")
        vocab.append(v)
        dims.append(d)
    (n_hidden,) = r.unpack("<I")
    hidden = r.unpack(f"<{n_hidden}I")
    (dim,) = r.unpack("<I")
    cfg = TowerConfig(tuple(dims), tuple(hidden), dim)
    tables = [r.floats((v, d)) for v, d in zip(vocab, dims)]
    W: dict[str, list[np.ndarray]] = {}
    b: dict[str, list[np.ndarray]] = {}
    sizes = cfg.layer_sizes
    for side in SIDES:
        W[side], b[side] = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            W[side].append(r.floats((fan_out, fan_in)))
            b[side].append(r.floats((fan_out,)))
    params = ModelParams(cfg, tables, W, b)
    if r.done:
        return params, None, {}
    if r.take(4) != STATE_MARKER:
        raise DataError(f"{source}: trailing bytes after model tensors")
    (meta_len,) = r.unpack("<Q")
    meta = json.loads(r.take(meta_len).decode())
    (n_arrays,) = r.unpack("<I")
    arrays = {}
    for _ in range(n_arrays):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode()
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}Q")
        arrays[name] = r.floats(shape)
    if not r.done:
        raise DataError(f"{source}: trailing bytes after state section")
    return params, meta, arrays


def save(path, params: ModelParams, meta: dict | None = None, arrays: dict | None = None) -> None:
    path = Path(path)
    try:
        path.write_bytes(dumps(params, meta, arrays))
    except OSError as e:
        raise DataError(f"{path}: cannot write checkpoint ({e.strerror})") from e


def load(path) -> tuple[ModelParams, dict | None, dict[str, np.ndarray]]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise DataError(f"{path}: cannot read checkpoint ({e.strerror})") from e
    return loads(data, str(path))
