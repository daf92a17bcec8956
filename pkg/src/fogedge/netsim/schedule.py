"""Patch-node descriptions and the round-robin TDMA schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from ..errors import ConfigError
from ..signals import ModalityKind
from .frames import CODE_BITS, frame_bits

LINK_RATE_BPS = 40e6
DEFAULT_SLOT_S = 0.010
DEFAULT_GUARD_S = 50e-6
UTILIZATION_BOUND = 0.8
MAX_PAYLOAD_BITS = 1024


@dataclass(frozen=True)
class NodeConfig:
    """A patch node sampling ``channels`` (modality, name) at one integer rate."""

    node_id: int
    name: str
    channels: tuple
    sample_rate_hz: int
    max_payload_bits: int = MAX_PAYLOAD_BITS

    def __post_init__(self):
        if not 0 <= self.node_id <= 255:
            raise ConfigError(f"node_id must fit the 8-bit header, got {self.node_id}")
        if not self.channels:
            raise ConfigError(f"node {self.name} has no channels")
        if int(self.sample_rate_hz) != self.sample_rate_hz or self.sample_rate_hz <= 0:
            raise ConfigError(f"node {self.name}: sample rate must be a positive integer")
        if self.groups_per_frame < 1:
            raise ConfigError(f"node {self.name}: one sample group exceeds the payload limit")

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    @property
    def payload_rate_bps(self) -> float:
        return self.n_channels * self.sample_rate_hz * CODE_BITS

    @property
    def groups_per_frame(self) -> int:
        return self.max_payload_bits // (CODE_BITS * self.n_channels)

    def bits_per_period(self, period_s: float) -> int:
        """Worst-case on-air bits for the samples accumulated over ``period_s``."""
        groups = math.ceil(self.sample_rate_hz * period_s) + 1
        full, rest = divmod(groups, self.groups_per_frame)
        bits = full * frame_bits(self.groups_per_frame * self.n_channels)
        if rest:
            bits += frame_bits(rest * self.n_channels)
        return bits


def default_patch_nodes(sample_rate_hz: int = 1000) -> list[NodeConfig]:
    """Four leg patches, each with one EMG electrode and a 3-axis accelerometer."""
    nodes = []
    for i, site in enumerate(("TA_L", "GA_L", "TA_R", "GA_R")):
        chans = ((ModalityKind.EMG, site),) + tuple((ModalityKind.ACC, f"{site}_{a}") for a in "xyz")
        nodes.append(NodeConfig(i, site, chans, sample_rate_hz))
    return nodes


@dataclass(frozen=True)
class TdmaSchedule:
    nodes: tuple
    slot_duration_s: float = DEFAULT_SLOT_S
    link_rate_bps: float = LINK_RATE_BPS
    guard_time_s: float = DEFAULT_GUARD_S
    superframe: tuple = field(default=())

    @property
    def n_slots(self) -> int:
        return len(self.superframe)

    @property
    def period_s(self) -> float:
        return self.n_slots * self.slot_duration_s

    def slot_of(self, node_id: int) -> int:
        return self.superframe.index(node_id)

    def node(self, node_id: int) -> NodeConfig:
        for n in self.nodes:
            if n.node_id == node_id:
                return n
        raise KeyError(node_id)

    @property
    def usable_slot_bits(self) -> float:
        return (self.slot_duration_s - 2 * self.guard_time_s) * self.link_rate_bps

    def node_airtime_bits(self, node: NodeConfig) -> int:
        return node.bits_per_period(self.period_s)

    def utilization(self) -> float:
        """Fraction of link time carrying frames, worst case."""
        bits = sum(self.node_airtime_bits(n) for n in self.nodes)
        return bits / (self.link_rate_bps * self.period_s)

    def per_node_throughput_bps(self) -> float:
        """Payload capacity one slot per superframe offers a node."""
        return self.usable_slot_bits / self.period_s


def build_schedule(nodes, slot_duration_s: float = DEFAULT_SLOT_S, link_rate_bps: float = LINK_RATE_BPS,
                   guard_time_s: float = DEFAULT_GUARD_S,
                   utilization_bound: float = UTILIZATION_BOUND) -> TdmaSchedule:
    """Round-robin superframe with one slot per node, in node-id order.

    Rejects duplicate ids and nodes whose worst-case traffic per superframe
    exceeds ``utilization_bound`` of the usable (guard-trimmed) slot.
    """
    nodes = tuple(sorted(nodes, key=lambda n: n.node_id))
    if not nodes:
        raise ConfigError("schedule needs at least one node")
    ids = [n.node_id for n in nodes]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"duplicate node ids in {ids}")
    if slot_duration_s <= 2 * guard_time_s:
        raise ConfigError("slot must be longer than twice the guard time")
    if not 0 < utilization_bound <= 1:
        raise ConfigError("utilization_bound must lie in (0, 1]")
    sched = TdmaSchedule(nodes, slot_duration_s, link_rate_bps, guard_time_s, tuple(ids))
    for n in nodes:
        need = sched.node_airtime_bits(n)
        if need > utilization_bound * sched.usable_slot_bits:
            raise ConfigError(
                f"node {n.name}: {need} bits per superframe exceed {utilization_bound:.0%} of the "
                f"{sched.usable_slot_bits:.0f}-bit slot")
    return sched
