from fractions import Fraction

import numpy as np
import pytest

from fogedge.nn.model import default_model_spec
from fogedge.signals import ModalityKind, Recording, Stream, Window


def make_recording(subject_id="S01", duration_s=10.0, rates=None, channels=None, intervals=(), seed=0):
    """Gaussian-noise recording with the requested channels per modality."""
    rates = rates or {ModalityKind.EEG: 100, ModalityKind.EMG: 200, ModalityKind.ACC: 50}
    channels = channels or {ModalityKind.EEG: ("Fz", "Cz"), ModalityKind.EMG: ("TA_L",),
                            ModalityKind.ACC: ("L_x", "L_y")}
    rng = np.random.default_rng(seed)
    streams = []
    for m, names in channels.items():
        n = int(round(rates[m] * duration_s))
        for c in names:
            streams.append(Stream(m, c, Fraction(rates[m]), rng.normal(size=n)))
    return Recording(subject_id, tuple(streams), tuple(intervals), duration_s)


TINY_GEOMETRY = {ModalityKind.EEG: (2, 24), ModalityKind.EMG: (1, 20), ModalityKind.ACC: (2, 16)}


def tiny_spec(geometry=None, **kw):
    opts = dict(eeg_kernels=(5, 3), emg_kernel=4, acc_kernel=3, head_dims=(6, 4))
    opts.update(kw)
    return default_model_spec(geometry or TINY_GEOMETRY, **opts)


def random_window(rng, geometry=None, label=None, subject_id="T"):
    geometry = geometry or TINY_GEOMETRY
    blocks = {m: rng.normal(size=shape) for m, shape in geometry.items()}
    return Window(subject_id, 0.0, 3.0, blocks, label=label)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_tiny_spec(rng):
    """Randomized small architecture: kernels, strides, padding, depth and multipliers vary."""
    from dataclasses import replace

    from fogedge.nn.model import BranchSpec, Dense, DepthwiseConv1D, GlobalStats, ModelSpec, ReLU, Sigmoid

    def path(name, modality, channels, t, kernel):
        layers, c = [], channels
        for i in range(int(rng.integers(1, 3))):
            k = min(kernel, t)
            conv = DepthwiseConv1D(k, int(rng.integers(1, 3)), c, str(rng.choice(["valid", "same"])),
                                   int(rng.integers(1, 3)) if i == 0 else 1)
            layers += [conv, ReLU()]
            t, c = conv.out_len(t), conv.out_channels
        return BranchSpec(name, modality, tuple(layers) + (GlobalStats(),))

    geometry = {ModalityKind.EEG: (int(rng.integers(1, 3)), int(rng.integers(10, 16))),
                ModalityKind.EMG: (1, int(rng.integers(8, 14))),
                ModalityKind.ACC: (int(rng.integers(1, 3)), int(rng.integers(6, 10)))}
    k_lo = int(rng.integers(4, 6))
    branches = (
        path("eeg_lo", ModalityKind.EEG, *geometry[ModalityKind.EEG], k_lo),
        path("eeg_hi", ModalityKind.EEG, *geometry[ModalityKind.EEG], k_lo - 2),
        path("emg", ModalityKind.EMG, *geometry[ModalityKind.EMG], int(rng.integers(2, 5))),
        path("acc", ModalityKind.ACC, *geometry[ModalityKind.ACC], int(rng.integers(2, 4))),
    )
    scales = {m: float(rng.uniform(0.5, 2.0)) for m in geometry}
    partial = ModelSpec(branches, (), geometry, scales)
    width = partial.feature_dim()
    h1, h2 = int(rng.integers(3, 6)), int(rng.integers(2, 4))
    head = (Dense(width, h1), ReLU(), Dense(h1, h2), ReLU(), Dense(h2, 1), Sigmoid())
    return replace(partial, head=head).validate()


# ---------------------------------------------------------------------------
# acceptance summary: one line per @pytest.mark.criterion test

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "SKIP" if rep.skipped else "PASS" if rep.passed else "FAIL"
        measured = "; ".join(f"{k}={v}" for k, v in item.user_properties)
        _CRITERIA[number] = (status, title, measured)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title, measured = _CRITERIA[number]
        line = f"criterion {number:>2}  {status}  {title}"
        terminalreporter.write_line(line + (f"  [{measured}]" if measured else ""))
