"""Sample sources feeding the patch nodes of a simulation."""

from __future__ import annotations

import hashlib

import numpy as np

from ..errors import ConfigError, DataError
from ..frontend import ACC_SENSITIVITY_MV_PER_G, adc_dequantize, adc_lsb_mv, preset, round_half_away
from ..signals import ModalityKind, Recording, Window, n_samples
from .schedule import NodeConfig

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (x + np.uint64(0x9E3779B97F4A7C15)) & _MASK64
        z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _MASK64
        z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _MASK64
        return z ^ (z >> np.uint64(31))


class SyntheticSource:
    """Pseudo-random 12-bit codes addressable by (node, channel, sample index).

    Any range can be regenerated on demand, so arbitrarily long simulations
    need no stored streams and reconstructed data can be checked afterwards.
    """

    CHUNK = 1 << 14

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._cache = {}

    def n_groups(self, node: NodeConfig) -> int | None:
        return None

    def _generate(self, node: NodeConfig, start: int, stop: int) -> np.ndarray:
        idx = np.arange(start, stop, dtype=np.uint64)[:, None]
        ch = np.arange(node.n_channels, dtype=np.uint64)[None, :]
        with np.errstate(over="ignore"):
            key = (np.uint64(self.seed) * np.uint64(0x100000001B3) + np.uint64(node.node_id)) & _MASK64
            x = (idx * np.uint64(64) + ch + (key << np.uint64(40))) & _MASK64
        return (_splitmix64(x) & np.uint64(0xFFF)).astype(np.int64)

    def codes(self, node: NodeConfig, start: int, stop: int) -> np.ndarray:
        k = start // self.CHUNK
        if stop <= (k + 1) * self.CHUNK:
            cached = self._cache.get(node.node_id)
            if cached is None or cached[0] != k:
                cached = (k, self._generate(node, k * self.CHUNK, (k + 1) * self.CHUNK))
                self._cache[node.node_id] = cached
            return cached[1][start - k * self.CHUNK:stop - k * self.CHUNK]
        return self._generate(node, start, stop)


def _side(name: str) -> str:
    if name.endswith("_L") or name.startswith("L_"):
        return "L"
    if name.endswith("_R") or name.startswith("R_"):
        return "R"
    return "-"


def patch_nodes_for(recording: Recording) -> list[NodeConfig]:
    """Radio nodes for the leg channels of a recording: one per (leg, modality).

    EEG stays at the central node and never crosses the link.
    """
    groups: dict[tuple, list] = {}
    for s in recording.streams:
        if s.modality == ModalityKind.EEG:
            continue
        groups.setdefault((_side(s.channel), s.modality), []).append(s)
    order = sorted(groups, key=lambda k: (k[0], [ModalityKind.EMG, ModalityKind.ACC].index(k[1])))
    nodes = []
    for i, key in enumerate(order):
        streams = groups[key]
        rate = streams[0].sample_rate_hz
        if rate.denominator != 1:
            raise ConfigError(f"radio channels need integer sample rates, got {rate}")
        name = f"{key[1].value}_{key[0]}"
        nodes.append(NodeConfig(i, name, tuple((s.modality, s.channel) for s in streams), int(rate)))
    return nodes


class RecordingSource:
    """Serves ADC codes recovered from a recording's input-referred samples."""

    def __init__(self, recording: Recording, nodes: list[NodeConfig] | None = None,
                 emg_gain: float | None = None, acc_mv_per_g: float = ACC_SENSITIVITY_MV_PER_G):
        self.recording = recording
        self.nodes = nodes if nodes is not None else patch_nodes_for(recording)
        self.scale = {ModalityKind.EMG: (emg_gain or preset("emg").gain) / 1000.0,
                      ModalityKind.ACC: acc_mv_per_g}
        self._codes = {}
        for node in self.nodes:
            cols = []
            for modality, channel in node.channels:
                s = recording.stream(modality, channel)
                if s.sample_rate_hz != node.sample_rate_hz:
                    raise ConfigError(f"{channel}: stream rate {s.sample_rate_hz} differs from node rate")
                cols.append(self.to_codes(modality, s.samples))
            self._codes[node.node_id] = np.column_stack(cols)

    def to_codes(self, modality: ModalityKind, values) -> np.ndarray:
        raw = round_half_away(np.asarray(values) * self.scale[modality] / adc_lsb_mv()) + 2048
        if raw.size and (raw.min() < 0 or raw.max() > 4095):
            raise DataError(f"{modality.value} samples exceed the ADC range")
        return raw.astype(np.int64)

    def from_codes(self, modality: ModalityKind, codes) -> np.ndarray:
        return adc_dequantize(codes) / self.scale[modality]

    def n_groups(self, node: NodeConfig) -> int:
        return len(self._codes[node.node_id])

    def codes(self, node: NodeConfig, start: int, stop: int) -> np.ndarray:
        return self._codes[node.node_id][start:stop]

    def to_window(self, assembled) -> Window:
        """Model input for an assembled window: radio channels from the link, EEG local."""
        rec = self.recording
        per_channel = {}
        for node in self.nodes:
            block = assembled.codes[node.node_id]
            for j, (modality, channel) in enumerate(node.channels):
                per_channel[(modality, channel)] = self.from_codes(modality, block[:, j])
        blocks, channels = {}, {}
        for m in rec.modalities():
            names = rec.channel_names(m)
            if m == ModalityKind.EEG:
                n0 = n_samples(rec.rate(m), assembled.start_s)
                n = n_samples(rec.rate(m), assembled.length_s)
                blocks[m] = rec.block(m)[:, n0:n0 + n]
            else:
                blocks[m] = np.stack([per_channel[(m, c)] for c in names])
            channels[m] = tuple(names)
        return Window(rec.subject_id, assembled.start_s, assembled.length_s, blocks, channels)


def source_digest(source, node: NodeConfig, n_groups: int, chunk: int = 1 << 16) -> str:
    """sha256 of a node's first ``n_groups`` code groups (int16, little-endian)."""
    h = hashlib.sha256()
    for a in range(0, n_groups, chunk):
        h.update(source.codes(node, a, min(n_groups, a + chunk)).astype("<i2").tobytes())
    return h.hexdigest()


