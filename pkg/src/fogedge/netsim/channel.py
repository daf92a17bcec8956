"""Bit channel of the impulse-radio link with n-pulse majority decoding."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError


def ber_majority(p_pulse: float, n_pulses: int = 5) -> float:
    """Bit error probability when each bit is sent as ``n_pulses`` pulses and decided by majority."""
    if n_pulses < 1 or n_pulses % 2 == 0:
        raise ConfigError(f"n_pulses must be a positive odd integer, got {n_pulses}")
    if not 0.0 <= p_pulse <= 1.0:
        raise ConfigError(f"p_pulse must lie in [0, 1], got {p_pulse}")
    q = 1.0 - p_pulse
    return math.fsum(math.comb(n_pulses, k) * p_pulse ** k * q ** (n_pulses - k)
                     for k in range((n_pulses + 1) // 2, n_pulses + 1))


def solve_pulse_error_for_ber(target_ber: float, n_pulses: int = 5, tol: float = 1e-15) -> float:
    """Per-pulse error probability giving ``target_ber`` after majority decoding (bisection)."""
    if not 0.0 < target_ber <= 0.5:
        raise ConfigError(f"target_ber must lie in (0, 0.5], got {target_ber}")
    lo, hi = 0.0, 0.5
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ber_majority(mid, n_pulses) < target_ber:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class ChannelModel:
    p_pulse: float = 0.0
    pulses_per_bit: int = 5

    def __post_init__(self):
        ber_majority(self.p_pulse, self.pulses_per_bit)  # validates

    @property
    def ber(self) -> float:
        return ber_majority(self.p_pulse, self.pulses_per_bit)

    @classmethod
    def for_ber(cls, target_ber: float, pulses_per_bit: int = 5) -> "ChannelModel":
        return cls(solve_pulse_error_for_ber(target_ber, pulses_per_bit), pulses_per_bit)


def error_positions(n_bits: int, ber: float, rng: np.random.Generator) -> np.ndarray:
    """Sorted positions of independently flipped bits among ``n_bits``.

    Drawing a binomial count and then distinct uniform positions gives the same
    law as flipping every bit independently, at a cost independent of ``n_bits``
    when errors are rare.
    """
    if ber <= 0.0 or n_bits == 0:
        return np.zeros(0, dtype=np.int64)
    k = int(rng.binomial(n_bits, ber))
    if k == 0:
        return np.zeros(0, dtype=np.int64)
    return np.sort(rng.choice(n_bits, size=k, replace=False)).astype(np.int64)


def flip_bits(data: bytes, positions: np.ndarray) -> bytes:
    """Flip bit positions (MSB-first within each byte) of a byte string."""
    if len(positions) == 0:
        return bytes(data)
    buf = np.frombuffer(data, dtype=np.uint8).copy()
    np.bitwise_xor.at(buf, positions // 8, (0x80 >> (positions % 8)).astype(np.uint8))
    return buf.tobytes()
