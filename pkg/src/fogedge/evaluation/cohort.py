"""Synthetic multi-modal FoG cohorts for desk-scale experiments.

Each subject gets walking-like baseline activity in every modality, a
sequence of planted FoG episodes, and subject-specific gains so that
leave-one-subject-out testing is not trivial. During an episode a modality
carries its signature only if the episode "expresses" it:

- EEG: added band-limited (15-25 Hz) activity,
- EMG: extra high-frequency bursts modulated at a trembling rate,
- ACC: a 3-8 Hz tremor-like component on all axes.

The ``complementary`` profile expresses each modality in only part of the
episodes, so one modality alone is weakly informative and the three jointly
are strongly informative. All signals then pass through the front-end model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ..errors import ConfigError
from ..frontend import acc_pipeline, front_end_pipeline, preset
from ..signals import (DEFAULT_CHANNELS, DEFAULT_STRIDE_S, DEFAULT_WINDOW_S, ModalityKind, Recording,
                       Stream)

DEFAULT_RATES = {ModalityKind.EEG: 250, ModalityKind.EMG: 1000, ModalityKind.ACC: 100}


@dataclass(frozen=True)
class EffectProfile:
    name: str
    eeg_uv: float
    emg_uv: float
    acc_g: float
    express_prob: float = 1.0


PROFILES = {
    "null": EffectProfile("null", 0.0, 0.0, 0.0),
    "strong": EffectProfile("strong", 12.0, 40.0, 0.25),
    "complementary": EffectProfile("complementary", 9.0, 30.0, 0.18, express_prob=0.4),
    "eeg_only": EffectProfile("eeg_only", 12.0, 0.0, 0.0),
}


def get_profile(name: str) -> EffectProfile:
    try:
        return PROFILES[name]
    except KeyError:
        raise ConfigError(f"unknown effect profile {name!r}; choose from {sorted(PROFILES)}") from None


def _band_noise(rng, n: int, rate: float, lo: float, hi: float) -> np.ndarray:
    """Unit-RMS Gaussian noise confined to [lo, hi] Hz (FFT masking)."""
    spec = np.fft.rfft(rng.normal(size=n))
    f = np.fft.rfftfreq(n, 1.0 / rate)
    spec[(f < lo) | (f > hi)] = 0
    x = np.fft.irfft(spec, n)
    sd = x.std()
    return x / sd if sd > 0 else x


def _pink_noise(rng, n: int, rate: float, lo: float = 0.5) -> np.ndarray:
    spec = np.fft.rfft(rng.normal(size=n))
    f = np.fft.rfftfreq(n, 1.0 / rate)
    shape = np.zeros_like(f)
    shape[f >= lo] = 1.0 / np.sqrt(f[f >= lo])
    x = np.fft.irfft(spec * shape, n)
    return x / x.std()


def plant_episodes(rng, duration_s: float) -> list[tuple[float, float]]:
    out = []
    t = float(rng.uniform(2.0, 6.0))
    while True:
        length = float(rng.uniform(3.0, 7.0))
        end = min(t + length, duration_s)
        if end - t >= 1.0:
            out.append((round(t, 2), round(end, 2)))
        t = end + float(rng.uniform(5.0, 12.0))
        if t >= duration_s - 1.0:
            return out


def _episode_mask(t: np.ndarray, episodes, active) -> np.ndarray:
    mask = np.zeros_like(t)
    for (a, b), on in zip(episodes, active):
        if on:
            mask[(t >= a) & (t < b)] = 1.0
    return mask


def _smooth(mask: np.ndarray, rate: float, ramp_s: float = 0.25) -> np.ndarray:
    n = max(1, int(rate * ramp_s))
    if n == 1:
        return mask
    kernel = np.hanning(n + 2)[1:-1]
    return np.convolve(mask, kernel / kernel.sum(), mode="same")


def synth_subject(subject_id: str, duration_s: float, profile: EffectProfile, rng,
                  rates: dict | None = None) -> Recording:
    rates = {**DEFAULT_RATES, **(rates or {})}
    episodes = plant_episodes(rng, duration_s)
    # each episode expresses each modality independently, at least one
    express = []
    for _ in episodes:
        while True:
            e = rng.random(3) < profile.express_prob
            if e.any():
                break
        express.append(e)
    express = np.array(express).reshape(-1, 3)
    effect_scale = float(rng.uniform(0.7, 1.3))
    step_hz = float(rng.uniform(0.8, 1.2))
    gains = np.exp(rng.normal(0.0, 0.25, size=3))
    streams = []

    # EEG: pink background + alpha, FoG adds 15-25 Hz activity
    r = rates[ModalityKind.EEG]
    n = int(round(r * duration_s))
    t = np.arange(n) / r
    fog = _smooth(_episode_mask(t, episodes, express[:, 0]), r)
    common_beta = _band_noise(rng, n, r, 15.0, 25.0)
    alpha_amp = float(rng.uniform(3.0, 8.0))
    base_beta = float(rng.uniform(1.0, 3.0))
    eeg_cfg = preset("eeg")
    for ch in DEFAULT_CHANNELS[ModalityKind.EEG]:
        x = 12.0 * gains[0] * _pink_noise(rng, n, r)
        x += alpha_amp * np.sin(2 * math.pi * float(rng.uniform(9.0, 11.0)) * t + rng.uniform(0, 2 * math.pi))
        local_beta = _band_noise(rng, n, r, 15.0, 25.0)
        x += base_beta * local_beta
        x += profile.eeg_uv * effect_scale * fog * (0.7 * common_beta + 0.3 * local_beta)
        out = front_end_pipeline(x, eeg_cfg, r, int(rng.integers(2**32)))
        streams.append(Stream(ModalityKind.EEG, ch, Fraction(r), out.signal_uv))

    # EMG: gait-locked bursts of band-limited noise, FoG adds trembling bursts
    r = rates[ModalityKind.EMG]
    n = int(round(r * duration_s))
    t = np.arange(n) / r
    fog = _smooth(_episode_mask(t, episodes, express[:, 1]), r)
    tremble_hz = float(rng.uniform(5.0, 7.0))
    emg_cfg = preset("emg").with_band_limit(r)
    for i, ch in enumerate(DEFAULT_CHANNELS[ModalityKind.EMG]):
        phase = math.pi * i
        gait_env = 4.0 + 25.0 * np.maximum(0.0, np.sin(2 * math.pi * step_hz * t + phase)) ** 2
        fog_env = profile.emg_uv * effect_scale * fog * (0.5 + 0.5 * np.sin(2 * math.pi * tremble_hz * t + phase) ** 2)
        carrier = _band_noise(rng, n, r, 20.0, min(450.0, 0.45 * r))
        x = gains[1] * gait_env * carrier + fog_env * _band_noise(rng, n, r, 20.0, min(450.0, 0.45 * r))
        out = front_end_pipeline(x, emg_cfg, r, int(rng.integers(2**32)))
        streams.append(Stream(ModalityKind.EMG, ch, Fraction(r), out.signal_uv))

    # ACC: gravity + gait oscillation + sensor noise, FoG adds 3-8 Hz tremor
    r = rates[ModalityKind.ACC]
    n = int(round(r * duration_s))
    t = np.arange(n) / r
    fog = _smooth(_episode_mask(t, episodes, express[:, 2]), r)
    tremor = _band_noise(rng, n, r, 3.0, 8.0)
    for i, ch in enumerate(DEFAULT_CHANNELS[ModalityKind.ACC]):
        leg_phase = math.pi * (i // 3)
        axis = i % 3
        gravity = 1.0 if axis == 2 else 0.0
        gait = 0.2 * gains[2] * np.sin(2 * math.pi * step_hz * t + leg_phase + axis)
        x = gravity + gait + 0.03 * rng.normal(size=n)
        x += profile.acc_g * effect_scale * fog * (0.6 * tremor + 0.4 * _band_noise(rng, n, r, 3.0, 8.0))
        streams.append(Stream(ModalityKind.ACC, ch, Fraction(r), acc_pipeline(x).signal_uv))

    return Recording(subject_id, tuple(streams), tuple(episodes), duration_s)


def generate_synthetic_cohort(n_subjects: int = 12, windows_per_subject: int = 40,
                              effect_profile: str = "complementary", seed: int = 7,
                              window_length_s: float = DEFAULT_WINDOW_S,
                              stride_s: float = DEFAULT_STRIDE_S, rates: dict | None = None) -> list[Recording]:
    """Deterministic cohort; each recording yields exactly ``windows_per_subject`` windows."""
    if n_subjects < 2:
        raise ConfigError("a cohort needs at least 2 subjects for leave-one-out testing")
    if windows_per_subject < 1:
        raise ConfigError("windows_per_subject must be >= 1")
    profile = get_profile(effect_profile)
    duration = window_length_s + (windows_per_subject - 1) * stride_s
    children = np.random.SeedSequence(seed).spawn(n_subjects)
    return [synth_subject(f"S{i + 1:02d}", duration, profile, np.random.default_rng(ss), rates)
            for i, ss in enumerate(children)]
