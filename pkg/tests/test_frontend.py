import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from fogedge.errors import ConfigError
from fogedge.frontend import (PRESETS, FrontEndConfig, acc_pipeline, adc_dequantize, adc_lsb_mv,
                              adc_quantize, add_input_noise, amplify, bandpass, front_end_pipeline,
                              round_half_away)

LSB_MV = 0.29296875


def _analog_bandpass_gain(f, lo, hi, fs):
    """Magnitude of the pre-warped 2nd-order Butterworth HP x LP pair at frequency f."""
    w = math.tan(math.pi * f / fs)
    r_lo = w / math.tan(math.pi * lo / fs)
    r_hi = w / math.tan(math.pi * hi / fs)
    return 1 / math.sqrt(1 + r_lo ** -4) / math.sqrt(1 + r_hi ** 4)


def _steady_amplitude(y, settle, f, fs):
    """Least-squares amplitude of the f-Hz component after ``settle`` samples."""
    t = np.arange(len(y))[settle:] / fs
    basis = np.column_stack([np.sin(2 * math.pi * f * t), np.cos(2 * math.pi * f * t)])
    coef, *_ = np.linalg.lstsq(basis, y[settle:], rcond=None)
    return float(np.hypot(*coef))


class TestAmplify:
    def test_linear_gain(self):
        mv, clipped = amplify([1.0], 200)
        assert_allclose(mv, [0.2])
        assert clipped == 0

    def test_three_millivolts_hits_rail_exactly(self):
        mv, clipped = amplify([3000.0], 200)
        assert mv[0] == 600.0 and clipped == 0

    def test_overrange_clamped_and_counted(self):
        mv, clipped = amplify([5000.0], 200)
        assert mv[0] == 600.0 and clipped == 1

    def test_negative_rail(self):
        mv, clipped = amplify([-5000.0, 10.0, -4000.0], 200)
        assert_allclose(mv, [-600.0, 2.0, -600.0])
        assert clipped == 2

    def test_gain_must_be_positive(self):
        with pytest.raises(ConfigError):
            amplify([1.0], 0)


class TestBandpass:
    def test_dc_rejected(self):
        fs = 250.0
        y = bandpass(np.ones(int(60 * fs)), 0.5, 60, fs)
        tail = np.abs(y[-int(5 * fs):]).max()
        assert 20 * math.log10(tail) < -20

    def test_passband_sine(self):
        fs, f = 250.0, 10.0
        t = np.arange(int(20 * fs)) / fs
        y = bandpass(np.sin(2 * math.pi * f * t), 0.5, 60, fs)
        amp = _steady_amplitude(y, int(10 * fs), f, fs)
        assert abs(20 * math.log10(amp)) < 1.0
        assert amp == pytest.approx(_analog_bandpass_gain(f, 0.5, 60, fs), rel=1e-6)

    def test_stopband_sine(self):
        fs, f = 2000.0, 500.0
        t = np.arange(int(10 * fs)) / fs
        y = bandpass(np.sin(2 * math.pi * f * t), 0.5, 60, fs)
        amp = _steady_amplitude(y, int(5 * fs), f, fs)
        assert 20 * math.log10(amp) < -30
        assert amp == pytest.approx(_analog_bandpass_gain(f, 0.5, 60, fs), rel=1e-6)

    @pytest.mark.parametrize("f", [2.0, 25.0, 45.0])
    def test_matches_analytic_response(self, f):
        fs = 250.0
        t = np.arange(int(30 * fs)) / fs
        y = bandpass(np.sin(2 * math.pi * f * t), 0.5, 60, fs)
        assert _steady_amplitude(y, int(20 * fs), f, fs) == pytest.approx(
            _analog_bandpass_gain(f, 0.5, 60, fs), rel=1e-6)

    def test_band_above_nyquist_rejected(self):
        with pytest.raises(ConfigError):
            bandpass(np.zeros(10), 0.5, 200, 250)

    def test_causal(self):
        x = np.zeros(200)
        x[100] = 1.0
        y = bandpass(x, 0.5, 60, 250)
        assert_array_equal(y[:100], 0.0)


class TestNoise:
    def test_zero_rms_is_identity(self):
        x = np.linspace(-1, 1, 50)
        assert_array_equal(add_input_noise(x, 0.0, 1), x)

    def test_rms_law_of_large_numbers(self):
        y = add_input_noise(np.zeros(10 ** 6), 1.9, 42)
        assert abs(y.std() / 1.9 - 1) < 0.01

    def test_seed_determinism(self):
        x = np.zeros(100)
        assert_array_equal(add_input_noise(x, 1.0, 5), add_input_noise(x, 1.0, 5))
        assert not np.array_equal(add_input_noise(x, 1.0, 5), add_input_noise(x, 1.0, 6))


class TestAdc:
    def test_lsb(self):
        assert adc_lsb_mv(12, 600.0) == LSB_MV == 1200 / 4096

    def test_mid_tread_zero(self):
        assert adc_quantize([0.0])[0] == 2048

    def test_rails(self):
        assert_array_equal(adc_quantize([600.0, -600.0, 1e6, -1e6]), [4095, 0, 4095, 0])

    def test_max_error_is_half_lsb(self):
        assert LSB_MV / 2 == pytest.approx(0.1465, abs=1e-4)

    def test_round_half_away(self):
        assert_array_equal(round_half_away([0.5, -0.5, 1.5, -2.5, 0.49]), [1, -1, 2, -3, 0])

    def test_round_trip_bound(self):
        rng = np.random.default_rng(0)
        v = rng.uniform(-600 + LSB_MV / 2, 600 - LSB_MV, size=10 ** 6)
        err = np.abs(adc_dequantize(adc_quantize(v)) - v)
        assert err.max() <= LSB_MV / 2

    @settings(max_examples=300, deadline=None)
    @given(v=st.floats(-600.0, 600.0), bits=st.integers(4, 16))
    def test_codes_in_range_and_formula(self, v, bits):
        code = int(adc_quantize([v], bits)[0])
        lsb = adc_lsb_mv(bits)
        assert 0 <= code <= (1 << bits) - 1
        expected = min(max(math.floor(abs(v) / lsb + 0.5) * (1 if v >= 0 else -1) + (1 << (bits - 1)), 0),
                       (1 << bits) - 1)
        assert code == expected


class TestInputReferred:
    def test_eeg_half_lsb(self):
        assert PRESETS["eeg"].input_referred_half_lsb_uv == pytest.approx(0.7324, abs=5e-5)

    def test_emg_half_lsb(self):
        assert PRESETS["emg"].input_referred_half_lsb_uv == pytest.approx(2.9297, abs=5e-5)


class TestPipeline:
    def test_round_trip_within_half_lsb(self):
        fs = 1000.0
        t = np.arange(int(4 * fs)) / fs
        x = 1000.0 * np.sin(2 * math.pi * 10 * t)
        cfg = FrontEndConfig(gain=200, band_lo_hz=0.1, band_hi_hz=400, noise_rms_uv=0.0)
        out = front_end_pipeline(x, cfg, fs, seed=0)
        filtered = bandpass(x, 0.1, 400, fs)
        assert out.clipped == 0
        assert np.abs(out.signal_uv - filtered).max() <= cfg.input_referred_half_lsb_uv + 1e-9
        settle = int(2 * fs)
        assert np.abs(out.signal_uv - x)[settle:].max() / 1000.0 <= 0.00073 + 0.01

    def test_saturation_reported(self):
        fs = 1000.0
        t = np.arange(2000) / fs
        x = 10000.0 * np.sin(2 * math.pi * 10 * t)
        out = front_end_pipeline(x, PRESETS["eeg"], fs, seed=0)
        assert out.clipped > 0
        assert out.codes.min() == 0 and out.codes.max() == 4095

    def test_nyquist_checked(self):
        with pytest.raises(ConfigError, match="Nyquist"):
            front_end_pipeline(np.zeros(10), PRESETS["emg"], 1000.0, seed=0)

    def test_band_limit_copy(self):
        cfg = PRESETS["emg"].with_band_limit(1000.0)
        assert cfg.band_hi_hz == pytest.approx(450.0)
        cfg.validate(1000.0)

    def test_clip_warning(self):
        with pytest.warns(UserWarning, match="clip"):
            FrontEndConfig(expected_input_uv=5000.0).validate()

    def test_acc_pipeline_resolution(self):
        g = np.linspace(-7.9, 7.9, 1001)
        out = acc_pipeline(g)
        assert out.clipped == 0
        assert np.abs(out.signal_uv - g).max() <= LSB_MV / 2 / 75.0 + 1e-12
