"""Binary tensor container shared by float and quantized models.

Layout (all integers little-endian)::

    header   16 bytes   magic[4] version:u16 flags:u16 n_tensors:u32 meta_len:u32
    meta     meta_len   UTF-8 JSON (model spec, activation params); may be empty
    table    per tensor path_len:u16 path[path_len] dtype:u8 ndim:u8 dims:u32*ndim
                        encoding:u8 has_qparams:u8 [scale:f64 zero_point:i32] data_len:u32
    data     concatenated tensor payloads, in table order

Magic is ``FOGP`` for float parameter files and ``FOGQ`` for quantized
models. dtype codes: 1 float32, 2 int8, 3 int32. Encoding 0 stores the
tensor densely in row-major order. Encoding 1 (sparse) stores
``count:u32``, then ``count`` index deltas as u8, then ``count`` values of
the tensor dtype; each delta is the distance from the previous stored
position (the first from position -1). Gaps longer than 255 are bridged
with filler entries of delta 255 and value 0. When the writer is asked for
sparse encoding, each tensor with more than half of its entries equal to
zero is stored in whichever form is shorter.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError

HEADER_SIZE = 16
VERSION = 1
FLAG_SPARSE = 1
MAGIC_FLOAT = b"FOGP"
MAGIC_QUANT = b"FOGQ"

DTYPES = {1: np.dtype("<f4"), 2: np.dtype("i1"), 3: np.dtype("<i4")}
DTYPE_CODES = {np.dtype("float32"): 1, np.dtype("int8"): 2, np.dtype("int32"): 3}

DENSE, SPARSE = 0, 1
SPARSE_THRESHOLD = 0.5


@dataclass
class TensorRecord:
    path: str
    data: np.ndarray
    qparams: tuple[float, int] | None = None


def table_entry_size(path: str, ndim: int, has_qparams: bool = False) -> int:
    return 2 + len(path.encode()) + 1 + 1 + 4 * ndim + 1 + 1 + (12 if has_qparams else 0) + 4


def _sparse_payload(flat: np.ndarray) -> bytes:
    nz = np.flatnonzero(flat)
    deltas, values = [], []
    prev = -1
    for i in nz.tolist():
        gap = i - prev
        while gap > 255:
            deltas.append(255)
            values.append(0)
            gap -= 255
        deltas.append(gap)
        values.append(flat[i])
        prev = i
    vals = np.array(values, dtype=flat.dtype) if values else np.zeros(0, dtype=flat.dtype)
    return struct.pack("<I", len(deltas)) + bytes(deltas) + vals.tobytes()


def _decode_sparse(buf: bytes, dtype: np.dtype, size: int) -> np.ndarray:
    (count,) = struct.unpack_from("<I", buf, 0)
    deltas = np.frombuffer(buf, dtype=np.uint8, count=count, offset=4).astype(np.int64)
    vals = np.frombuffer(buf, dtype=dtype, count=count, offset=4 + count)
    out = np.zeros(size, dtype=dtype)
    pos = np.cumsum(deltas) - 1
    if count and pos[-1] >= size:
        raise DataError("sparse tensor index out of range")
    out[pos] = vals
    return out


def _use_sparse(arr: np.ndarray) -> bool:
    return arr.size > 0 and np.count_nonzero(arr) < (1 - SPARSE_THRESHOLD) * arr.size


def encode(magic: bytes, records: list[TensorRecord], meta: dict | None = None,
           sparse: bool = False) -> bytes:
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode() if meta else b""
    table, blobs = [], []
    for rec in records:
        arr = np.ascontiguousarray(rec.data)
        code = DTYPE_CODES.get(arr.dtype)
        if code is None:
            raise DataError(f"{rec.path}: unsupported dtype {arr.dtype}")
        arr = arr.astype(DTYPES[code], copy=False)
        enc, blob = DENSE, arr.tobytes()
        if sparse and _use_sparse(arr):
            packed = _sparse_payload(arr.ravel())
            if len(packed) < len(blob):
                enc, blob = SPARSE, packed
        path = rec.path.encode()
        entry = struct.pack("<H", len(path)) + path + struct.pack("<BB", code, arr.ndim)
        entry += struct.pack(f"<{arr.ndim}I", *arr.shape)
        entry += struct.pack("<BB", enc, rec.qparams is not None)
        if rec.qparams is not None:
            entry += struct.pack("<di", float(rec.qparams[0]), int(rec.qparams[1]))
        entry += struct.pack("<I", len(blob))
        table.append(entry)
        blobs.append(blob)
    header = magic + struct.pack("<HHII", VERSION, FLAG_SPARSE if sparse else 0, len(records),
                                 len(meta_bytes))
    return header + meta_bytes + b"".join(table) + b"".join(blobs)


def decode(buf: bytes, expect_magic: bytes | None = None) -> tuple[bytes, list[TensorRecord], dict]:
    if len(buf) < HEADER_SIZE:
        raise DataError("truncated container header")
    magic = buf[:4]
    if expect_magic is not None and magic != expect_magic:
        raise DataError(f"bad magic {magic!r}, expected {expect_magic!r}")
    version, _flags, n, meta_len = struct.unpack_from("<HHII", buf, 4)
    if version != VERSION:
        raise DataError(f"unsupported container version {version}")
    off = HEADER_SIZE
    meta = json.loads(buf[off:off + meta_len].decode()) if meta_len else {}
    off += meta_len
    entries = []
    try:
        for _ in range(n):
            (plen,) = struct.unpack_from("<H", buf, off)
            off += 2
            path = buf[off:off + plen].decode()
            off += plen
            code, ndim = struct.unpack_from("<BB", buf, off)
            off += 2
            shape = struct.unpack_from(f"<{ndim}I", buf, off)
            off += 4 * ndim
            enc, has_q = struct.unpack_from("<BB", buf, off)
            off += 2
            q = None
            if has_q:
                q = struct.unpack_from("<di", buf, off)
                off += 12
            (dlen,) = struct.unpack_from("<I", buf, off)
            off += 4
            entries.append((path, DTYPES[code], shape, enc, q, dlen))
    except (struct.error, KeyError) as exc:
        raise DataError(f"corrupt container table ({exc})") from None
    records = []
    for path, dtype, shape, enc, q, dlen in entries:
        blob = buf[off:off + dlen]
        if len(blob) != dlen:
            raise DataError(f"{path}: truncated tensor payload")
        off += dlen
        size = int(np.prod(shape)) if shape else 1
        if enc == SPARSE:
            flat = _decode_sparse(blob, dtype, size)
        else:
            flat = np.frombuffer(blob, dtype=dtype).copy()
        records.append(TensorRecord(path, flat.reshape(shape), q))
    if off != len(buf):
        raise DataError("trailing bytes after container payload")
    return magic, records, meta


def encode_parameters(params: dict, spec=None, sparse: bool = False) -> bytes:
    records = [TensorRecord(k, np.asarray(v, dtype=np.float32)) for k, v in params.items()]
    meta = {"spec": spec.to_dict()} if spec is not None else None
    return encode(MAGIC_FLOAT, records, meta, sparse)


def decode_parameters(buf: bytes):
    from .nn.model import ModelSpec

    _, records, meta = decode(buf, MAGIC_FLOAT)
    params = {r.path: r.data.astype(np.float64) for r in records}
    spec = ModelSpec.from_dict(meta["spec"]) if "spec" in meta else None
    return params, spec


def save_parameters(path, params: dict, spec=None, sparse: bool = False) -> int:
    data = encode_parameters(params, spec, sparse)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def load_parameters(path):
    try:
        with open(path, "rb") as fh:
            return decode_parameters(fh.read())
    except FileNotFoundError:
        raise DataError(f"missing model file {path}") from None
