"""Behavioral model of the analog recording chain.

noise (input-referred) -> bandpass -> programmable gain -> 12-bit ADC.
Everything here is a pure function of its arguments; randomness only enters
through an explicit seed.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np
from scipy import signal as sps

from .errors import ConfigError


@dataclass(frozen=True)
class FrontEndConfig:
    gain: float = 200.0
    band_lo_hz: float = 0.5
    band_hi_hz: float = 60.0
    noise_rms_uv: float = 1.9
    adc_bits: int = 12
    adc_range_mv: float = 600.0
    expected_input_uv: float | None = None

    def validate(self, sample_rate_hz: float | None = None) -> None:
        if self.gain <= 0:
            raise ConfigError(f"gain must be positive, got {self.gain}")
        if not 0 < self.band_lo_hz < self.band_hi_hz:
            raise ConfigError(f"need 0 < band_lo_hz < band_hi_hz, got {self.band_lo_hz}, {self.band_hi_hz}")
        if sample_rate_hz is not None and not self.band_hi_hz < sample_rate_hz / 2:
            raise ConfigError(
                f"band_hi_hz {self.band_hi_hz} must be below Nyquist ({sample_rate_hz / 2} Hz)")
        if self.noise_rms_uv < 0:
            raise ConfigError("noise_rms_uv must be non-negative")
        if not 2 <= self.adc_bits <= 16:
            raise ConfigError(f"adc_bits must be in 2..16, got {self.adc_bits}")
        if self.adc_range_mv <= 0:
            raise ConfigError("adc_range_mv must be positive")
        if self.expected_input_uv is not None:
            swing_mv = 2 * self.expected_input_uv * self.gain / 1000.0
            if swing_mv > 2 * self.adc_range_mv:
                warnings.warn(f"front end will clip: {swing_mv:.1f} mV swing exceeds "
                              f"ADC span {2 * self.adc_range_mv:.1f} mV", stacklevel=2)

    def with_band_limit(self, sample_rate_hz: float, fraction: float = 0.45) -> "FrontEndConfig":
        """Copy with band_hi clipped below Nyquist for low sample rates."""
        hi = min(self.band_hi_hz, fraction * sample_rate_hz)
        return FrontEndConfig(**{**asdict(self), "band_hi_hz": hi})

    @property
    def input_referred_half_lsb_uv(self) -> float:
        return adc_lsb_mv(self.adc_bits, self.adc_range_mv) / 2 / self.gain * 1000.0


PRESETS = {
    "eeg": FrontEndConfig(gain=200.0, band_lo_hz=0.5, band_hi_hz=60.0, noise_rms_uv=1.9),
    # configuration used for the bench amplifier measurements
    "eeg_test": FrontEndConfig(gain=200.0, band_lo_hz=0.5, band_hi_hz=200.0, noise_rms_uv=1.9),
    "emg": FrontEndConfig(gain=50.0, band_lo_hz=1.0, band_hi_hz=1000.0, noise_rms_uv=4.3),
}


def preset(name: str) -> FrontEndConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown front-end preset {name!r}; choose from {sorted(PRESETS)}") from None


def amplify(signal_uv, gain: float, adc_range_mv: float = 600.0) -> tuple[np.ndarray, int]:
    """Scale microvolts to millivolts at the ADC input, clamping at the rails.

    Returns the clamped signal and the number of clipped samples.
    """
    if gain <= 0:
        raise ConfigError(f"gain must be positive, got {gain}")
    out = np.asarray(signal_uv, dtype=np.float64) * gain / 1000.0
    clipped = int(np.count_nonzero(np.abs(out) > adc_range_mv))
    return np.clip(out, -adc_range_mv, adc_range_mv), clipped


def _butter2_coeffs(kind: str, fc: float, fs: float) -> np.ndarray:
    # bilinear transform with pre-warping at fc, Q = 1/sqrt(2)
    w0 = 2 * math.pi * fc / fs
    cw, alpha = math.cos(w0), math.sin(w0) / (2 / math.sqrt(2))
    if kind == "low":
        b = [(1 - cw) / 2, 1 - cw, (1 - cw) / 2]
    else:
        b = [(1 + cw) / 2, -(1 + cw), (1 + cw) / 2]
    a = [1 + alpha, -2 * cw, 1 - alpha]
    return np.array([b[0] / a[0], b[1] / a[0], b[2] / a[0], 1.0, a[1] / a[0], a[2] / a[0]])


def bandpass_sos(lo_hz: float, hi_hz: float, sample_rate_hz: float) -> np.ndarray:
    if not 0 < lo_hz < hi_hz < sample_rate_hz / 2:
        raise ConfigError(f"need 0 < lo < hi < fs/2, got lo={lo_hz}, hi={hi_hz}, fs={sample_rate_hz}")
    return np.vstack([_butter2_coeffs("high", lo_hz, sample_rate_hz),
                      _butter2_coeffs("low", hi_hz, sample_rate_hz)])


def bandpass(signal, lo_hz: float, hi_hz: float, sample_rate_hz: float) -> np.ndarray:
    """Causal 2nd-order Butterworth high-pass at lo cascaded with low-pass at hi."""
    sos = bandpass_sos(lo_hz, hi_hz, float(sample_rate_hz))
    return sps.sosfilt(sos, np.asarray(signal, dtype=np.float64))


def add_input_noise(signal_uv, noise_rms_uv: float, rng_seed) -> np.ndarray:
    if noise_rms_uv < 0:
        raise ConfigError("noise_rms_uv must be non-negative")
    x = np.asarray(signal_uv, dtype=np.float64)
    if noise_rms_uv == 0:
        return x.copy()
    rng = np.random.default_rng(rng_seed)
    return x + rng.normal(0.0, noise_rms_uv, size=x.shape)


def adc_lsb_mv(bits: int = 12, range_mv: float = 600.0) -> float:
    return 2.0 * range_mv / (1 << bits)


def round_half_away(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def adc_quantize(signal_mv, bits: int = 12, range_mv: float = 600.0) -> np.ndarray:
    """Mid-tread quantizer; codes are offset binary in 0..2**bits - 1."""
    if not 2 <= bits <= 16:
        raise ConfigError(f"bits must be in 2..16, got {bits}")
    lsb = adc_lsb_mv(bits, range_mv)
    half = 1 << (bits - 1)
    codes = round_half_away(np.asarray(signal_mv, dtype=np.float64) / lsb) + half
    return np.clip(codes, 0, (1 << bits) - 1).astype(np.int64)


def adc_saturations(signal_mv, bits: int = 12, range_mv: float = 600.0) -> int:
    """Number of samples whose unclamped code falls outside 0..2**bits - 1."""
    raw = round_half_away(np.asarray(signal_mv, dtype=np.float64) / adc_lsb_mv(bits, range_mv))
    half = 1 << (bits - 1)
    return int(np.count_nonzero((raw >= half) | (raw < -half)))


def adc_dequantize(codes, bits: int = 12, range_mv: float = 600.0) -> np.ndarray:
    return (np.asarray(codes, dtype=np.int64) - (1 << (bits - 1))) * adc_lsb_mv(bits, range_mv)


class FrontEndOutput(NamedTuple):
    signal_uv: np.ndarray
    codes: np.ndarray
    clipped: int


def front_end_pipeline(signal_uv, cfg: FrontEndConfig, sample_rate_hz: float, seed) -> FrontEndOutput:
    """Run a signal through noise, filter, gain and ADC; return input-referred microvolts."""
    cfg.validate(float(sample_rate_hz))
    x = add_input_noise(signal_uv, cfg.noise_rms_uv, seed)
    x = bandpass(x, cfg.band_lo_hz, cfg.band_hi_hz, sample_rate_hz)
    mv, clipped = amplify(x, cfg.gain, cfg.adc_range_mv)
    codes = adc_quantize(mv, cfg.adc_bits, cfg.adc_range_mv)
    clipped = max(clipped, adc_saturations(mv, cfg.adc_bits, cfg.adc_range_mv))
    out = adc_dequantize(codes, cfg.adc_bits, cfg.adc_range_mv) / cfg.gain * 1000.0
    return FrontEndOutput(out, codes, clipped)


# accelerometers share the ADC but have no biopotential amplifier
ACC_SENSITIVITY_MV_PER_G = 75.0


def acc_codes(signal_g, bits: int = 12, range_mv: float = 600.0,
              sensitivity_mv_per_g: float = ACC_SENSITIVITY_MV_PER_G) -> np.ndarray:
    return adc_quantize(np.asarray(signal_g, dtype=np.float64) * sensitivity_mv_per_g, bits, range_mv)


def acc_pipeline(signal_g, bits: int = 12, range_mv: float = 600.0,
                 sensitivity_mv_per_g: float = ACC_SENSITIVITY_MV_PER_G) -> FrontEndOutput:
    mv = np.asarray(signal_g, dtype=np.float64) * sensitivity_mv_per_g
    codes = adc_quantize(mv, bits, range_mv)
    clipped = adc_saturations(mv, bits, range_mv)
    return FrontEndOutput(adc_dequantize(codes, bits, range_mv) / sensitivity_mv_per_g, codes, clipped)
