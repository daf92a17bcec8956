"""Radio frame layout.

    [node id: 8 bits][sequence: 16 bits][payload: 12-bit codes][CRC-16-CCITT: 16 bits]

The sequence field holds the index of the frame's first sample group modulo
2**16. A sample group is one code per channel of the node, channels
interleaved. Odd code counts are padded with a 4-bit zero nibble so the frame
is a whole number of bytes; the padding is counted as airtime. The CRC
(polynomial 0x1021, initial value 0xFFFF) covers header and payload.
"""

from __future__ import annotations

import binascii
import struct
from typing import NamedTuple

import numpy as np

from ..errors import DataError

HEADER_BYTES = 3
CRC_BYTES = 2
CODE_BITS = 12
SEQ_MOD = 1 << 16


def crc16(data: bytes) -> int:
    return binascii.crc_hqx(data, 0xFFFF)


def pack_codes(codes: np.ndarray) -> bytes:
    c = np.asarray(codes, dtype=np.int64).ravel()
    if c.size and (c.min() < 0 or c.max() > 0xFFF):
        raise DataError("codes must lie in 0..4095")
    n = c.size
    if n % 2:
        c = np.append(c, 0)
    pairs = (c[0::2] << 12) | c[1::2]
    out = pairs.astype(">u4").view(np.uint8).reshape(-1, 4)[:, 1:]
    return out.tobytes()[:payload_bytes(n)]


def unpack_codes(payload: bytes, n_codes: int) -> np.ndarray:
    n_pairs = (n_codes + 1) // 2
    b = np.frombuffer(payload[:3 * n_pairs].ljust(3 * n_pairs, b"\x00"), dtype=np.uint8)
    b = b.reshape(-1, 3).astype(np.int64)
    v = (b[:, 0] << 16) | (b[:, 1] << 8) | b[:, 2]
    out = np.empty(2 * n_pairs, dtype=np.int64)
    out[0::2] = v >> 12
    out[1::2] = v & 0xFFF
    return out[:n_codes]


def payload_bytes(n_codes: int) -> int:
    return (CODE_BITS * n_codes + 7) // 8


def frame_bits(n_codes: int) -> int:
    return 8 * (HEADER_BYTES + payload_bytes(n_codes) + CRC_BYTES)


def encode_frame(node_id: int, first_group: int, codes: np.ndarray) -> bytes:
    """``codes`` is (groups, channels); it is sent group by group."""
    body = struct.pack(">BH", node_id, first_group % SEQ_MOD) + pack_codes(codes)
    return body + struct.pack(">H", crc16(body))


class DecodedFrame(NamedTuple):
    node_id: int
    seq: int
    codes: np.ndarray
    crc_ok: bool


def decode_frame(frame: bytes, n_channels: int) -> DecodedFrame:
    """Parse a frame; the code count follows from the frame length known to the receiver."""
    if len(frame) < HEADER_BYTES + CRC_BYTES:
        raise DataError("frame shorter than header + CRC")
    body, (crc,) = frame[:-CRC_BYTES], struct.unpack(">H", frame[-CRC_BYTES:])
    node_id, seq = struct.unpack(">BH", body[:HEADER_BYTES])
    payload = body[HEADER_BYTES:]
    n_codes = (8 * len(payload)) // CODE_BITS
    n_codes -= n_codes % n_channels
    codes = unpack_codes(payload, n_codes).reshape(-1, n_channels)
    return DecodedFrame(node_id, seq, codes, crc16(body) == crc)


def unwrap_seq(seq: int, expected: int) -> int:
    """Full group index closest to ``expected`` whose low 16 bits equal ``seq``."""
    base = expected - (expected % SEQ_MOD) + seq
    candidates = (base - SEQ_MOD, base, base + SEQ_MOD)
    return min(candidates, key=lambda c: abs(c - expected))
