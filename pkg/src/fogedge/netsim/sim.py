"""Discrete-event simulation of the body-area network.

Patch nodes sample their channels continuously and, in their TDMA slot, send
every sample group accumulated since the previous slot. The central node
demultiplexes frames by header, rebuilds each node's code stream, declares a
window ready once all nodes have delivered its samples, and runs one
inference at a time on a FIFO queue.

Times are integer nanoseconds. Events at the same instant are ordered by node
(patch nodes by id, then the central node) and then by event kind.
"""

from __future__ import annotations

import csv
import hashlib
import heapq
import json
import math
from dataclasses import asdict, dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Callable

import numpy as np

from ..errors import ConfigError, SimulationError
from .channel import ChannelModel, error_positions, flip_bits
from .frames import decode_frame, encode_frame, frame_bits, unwrap_seq
from .schedule import (DEFAULT_GUARD_S, DEFAULT_SLOT_S, LINK_RATE_BPS, UTILIZATION_BOUND, TdmaSchedule,
                       build_schedule)

NS = 1_000_000_000
CENTRAL = 256
TX_PJ_PER_BIT = 3.4
RX_PJ_PER_BIT = 110.7
MID_CODE = 2048  # ADC code of a zero-valued sample


class EventKind(IntEnum):
    SLOT_START = 0
    FRAME_TX = 1
    FRAME_RX = 2
    FRAME_CRC_FAIL = 3
    WINDOW_READY = 4
    INFERENCE_START = 5
    INFERENCE_DONE = 6
    ALERT = 7


LOSS_POLICIES = ("zero", "hold")


@dataclass(frozen=True)
class Scenario:
    """Link, timing, channel and inference settings of one simulation run."""

    duration_s: float = 60.0
    slot_duration_s: float = DEFAULT_SLOT_S
    guard_time_s: float = DEFAULT_GUARD_S
    link_rate_bps: float = LINK_RATE_BPS
    utilization_bound: float = UTILIZATION_BOUND
    drift_ppm: float = 20.0
    resync_interval_s: float = 1.0
    p_pulse: float = 0.0
    pulses_per_bit: int = 5
    window_s: float = 3.0
    stride_s: float = 3.0
    inference_time_s: float = 2.3
    alert_threshold: float = 0.5
    loss_policy: str = "zero"
    watchdog_s: float = 30.0
    seed: int = 0

    def validate(self) -> "Scenario":
        if self.duration_s <= 0:
            raise ConfigError("duration_s must be positive")
        if self.window_s <= 0 or self.stride_s <= 0:
            raise ConfigError("window_s and stride_s must be positive")
        if self.inference_time_s < 0:
            raise ConfigError("inference_time_s must be >= 0")
        if self.loss_policy not in LOSS_POLICIES:
            raise ConfigError(f"loss_policy must be one of {LOSS_POLICIES}, got {self.loss_policy!r}")
        if self.drift_ppm < 0 or self.resync_interval_s <= 0:
            raise ConfigError("drift_ppm must be >= 0 and resync_interval_s > 0")
        if self.drift_ppm * 1e-6 * self.resync_interval_s >= self.guard_time_s:
            raise ConfigError(
                f"{self.drift_ppm} ppm over {self.resync_interval_s} s resync drifts past the "
                f"{self.guard_time_s * 1e6:.0f} us guard time")
        if self.watchdog_s <= 0:
            raise ConfigError("watchdog_s must be positive")
        ChannelModel(self.p_pulse, self.pulses_per_bit)
        return self

    @property
    def channel(self) -> ChannelModel:
        return ChannelModel(self.p_pulse, self.pulses_per_bit)

    def to_dict(self) -> dict:
        return asdict(self)


_COLUMNS = ("time_ns", "kind", "node", "a", "b", "c", "x")
_DTYPES = (np.int64, np.int8, np.int16, np.int64, np.int64, np.int64, np.float64)

# meaning of the generic a/b/c/x columns per event kind
FIELD_NAMES = {
    EventKind.SLOT_START: ("superframe", "slot", None, None),
    EventKind.FRAME_TX: ("first_group", "bits", "frame", None),
    EventKind.FRAME_RX: ("first_group", "bits", "frame", None),
    EventKind.FRAME_CRC_FAIL: ("first_group", "bits", "frame", "bit_errors"),
    EventKind.WINDOW_READY: ("window", "degraded", "window_end_ns", None),
    EventKind.INFERENCE_START: ("window", "backlog", "window_end_ns", None),
    EventKind.INFERENCE_DONE: ("window", "backlog", "window_end_ns", "score"),
    EventKind.ALERT: ("window", None, "window_end_ns", "score"),
}


@dataclass
class EventLog:
    """Time-ordered events stored column-wise, plus run metadata."""

    time_ns: np.ndarray
    kind: np.ndarray
    node: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    x: np.ndarray
    horizon_ns: int = 0
    link_rate_bps: float = LINK_RATE_BPS
    period_s: float = 0.0
    node_names: dict = field(default_factory=dict)
    stream_digests: dict = field(default_factory=dict)
    groups_received: dict = field(default_factory=dict)
    diagnostics: list = field(default_factory=list)

    @classmethod
    def empty(cls) -> "EventLog":
        return cls(*(np.zeros(0, dtype=d) for d in _DTYPES))

    def __len__(self) -> int:
        return len(self.time_ns)

    def select(self, kind: EventKind) -> np.ndarray:
        return np.flatnonzero(self.kind == int(kind))

    def count(self, kind: EventKind) -> int:
        return int(np.count_nonzero(self.kind == int(kind)))

    def airtime_ns(self, bits) -> np.ndarray:
        return np.ceil(np.asarray(bits, dtype=np.float64) * NS / self.link_rate_bps).astype(np.int64)

    def digest(self) -> str:
        h = hashlib.sha256()
        for name, dt in zip(_COLUMNS, _DTYPES):
            h.update(np.ascontiguousarray(getattr(self, name), dtype=np.dtype(dt).newbyteorder("<")).tobytes())
        return h.hexdigest()

    def records(self):
        for i in range(len(self)):
            k = EventKind(int(self.kind[i]))
            rec = {"t_s": int(self.time_ns[i]) / NS, "kind": k.name.lower(), "node": int(self.node[i])}
            for fname, col in zip(FIELD_NAMES[k], ("a", "b", "c", "x")):
                if fname is not None:
                    v = getattr(self, col)[i]
                    rec[fname] = float(v) if col == "x" else int(v)
            yield rec

    def write_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for rec in self.records():
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


class _Recorder:
    def __init__(self):
        self.rows = []

    def __call__(self, t, kind, node, a=0, b=0, c=0, x=0.0):
        self.rows.append((t, int(kind), node, a, b, c, x))

    def to_log(self) -> EventLog:
        if not self.rows:
            return EventLog.empty()
        cols = list(zip(*self.rows))
        return EventLog(*(np.asarray(col, dtype=d) for col, d in zip(cols, _DTYPES)))


class _NodeStream:
    """Central-node view of one patch node's code stream.

    Holds groups ``base .. end`` in a growable buffer; older groups are dropped
    once no pending window needs them. Every group is hashed on arrival.
    """

    def __init__(self, n_channels: int, loss_policy: str):
        self.n_channels = n_channels
        self.loss_policy = loss_policy
        self.base = 0
        self.size = 0
        self.codes = np.zeros((4096, n_channels), dtype=np.int16)
        self.lost = np.zeros(4096, dtype=bool)
        self.last = np.full(n_channels, MID_CODE, dtype=np.int16)
        self.hash = hashlib.sha256()

    @property
    def end(self) -> int:
        return self.base + self.size

    def _append(self, block: np.ndarray, lost: bool) -> None:
        n = len(block)
        if n == 0:
            return
        block = np.asarray(block, dtype="<i2")
        self.hash.update(block.tobytes())
        if self.size + n > len(self.codes):
            cap = max(2 * len(self.codes), self.size + n)
            codes = np.zeros((cap, self.n_channels), dtype=np.int16)
            codes[:self.size] = self.codes[:self.size]
            flags = np.zeros(cap, dtype=bool)
            flags[:self.size] = self.lost[:self.size]
            self.codes, self.lost = codes, flags
        self.codes[self.size:self.size + n] = block
        self.lost[self.size:self.size + n] = lost
        self.size += n
        self.last = block[-1].copy()

    def _fill(self, n: int) -> None:
        if n <= 0:
            return
        value = MID_CODE if self.loss_policy == "zero" else self.last
        self._append(np.broadcast_to(np.asarray(value, dtype=np.int16), (n, self.n_channels)), True)

    def receive(self, first: int, codes: np.ndarray) -> None:
        if first < self.end:
            codes = codes[self.end - first:]
            first = self.end
        self._fill(first - self.end)
        self._append(codes, False)

    def lose(self, n_groups: int) -> None:
        self._fill(n_groups)

    def slice(self, start: int, stop: int) -> tuple[np.ndarray, bool]:
        i, j = start - self.base, stop - self.base
        return self.codes[i:j].copy(), bool(self.lost[i:j].any())

    def trim(self, keep_from: int) -> None:
        cut = min(max(0, keep_from - self.base), self.size)
        if cut > len(self.codes) // 2:
            rest = self.size - cut
            self.codes[:rest] = self.codes[cut:self.size]
            self.lost[:rest] = self.lost[cut:self.size]
            self.base += cut
            self.size = rest


@dataclass(frozen=True)
class AssembledWindow:
    """Codes of every radio node for one window, as rebuilt at the central node."""

    index: int
    start_s: float
    length_s: float
    codes: dict
    degraded: bool


def _window_groups(rate: int, start_s: float, length_s: float) -> tuple[int, int]:
    i0 = int(round(rate * start_s))
    return i0, i0 + int(round(rate * length_s))


def run_simulation(nodes, source, scenario: Scenario | None = None,
                   infer: Callable[[AssembledWindow], float] | None = None,
                   schedule: TdmaSchedule | None = None) -> EventLog:
    """Simulate ``scenario.duration_s`` seconds of streaming, assembly and inference.

    ``source.codes(node, start, stop)`` supplies each node's 12-bit codes and
    ``source.n_groups(node)`` its length (None for unbounded sources).
    ``infer`` maps an assembled window to a probability; without it windows are
    still assembled and queued but score NaN and raise no alerts.
    """
    sc = (scenario or Scenario()).validate()
    sched = schedule or build_schedule(nodes, sc.slot_duration_s, sc.link_rate_bps, sc.guard_time_s,
                                       sc.utilization_bound)
    nodes = list(sched.nodes)
    by_id = {n.node_id: n for n in nodes}
    seeds = np.random.SeedSequence(sc.seed).spawn(2)
    drift_rng, chan_rng = np.random.default_rng(seeds[0]), np.random.default_rng(seeds[1])
    ber = sc.channel.ber

    slot_ns = int(round(sc.slot_duration_s * NS))
    period_ns = slot_ns * sched.n_slots
    guard_ns = int(round(sc.guard_time_s * NS))
    resync_ns = int(round(sc.resync_interval_s * NS))
    horizon = int(round(sc.duration_s * NS))
    infer_ns = int(round(sc.inference_time_s * NS))
    watchdog_ns = int(round(sc.watchdog_s * NS))
    limits = {n.node_id: source.n_groups(n) for n in nodes}

    log = _Recorder()
    heap, counter = [], 0

    def push(t, node_key, kind, payload=None):
        nonlocal counter
        heapq.heappush(heap, (t, node_key, int(kind), counter, payload))
        counter += 1

    for k, nid in enumerate(sched.superframe):
        push(k * slot_ns, nid, EventKind.SLOT_START, (0, k))

    sent = {n.node_id: 0 for n in nodes}
    drift = {}
    streams = {n.node_id: _NodeStream(n.n_channels, sc.loss_policy) for n in nodes}
    frame_no = 0

    n_windows_max = None
    if all(v is not None for v in limits.values()):
        spans = []
        for n in nodes:
            dur = limits[n.node_id] / n.sample_rate_hz
            spans.append(dur)
        usable = min(spans)
        n_windows_max = 0 if usable + 1e-9 < sc.window_s else int(
            math.floor((usable - sc.window_s) / sc.stride_s + 1e-9)) + 1
    next_window = 0
    need_cache = [-1, {}]
    queue: list[AssembledWindow] = []
    running = None
    high_water = 0
    saturated = False
    last_progress = 0
    diagnostics = []

    def node_offset(nid: int, t: int) -> int:
        epoch = t // resync_ns
        if drift.get(nid, (None,))[0] != epoch:
            drift[nid] = (epoch, drift_rng.uniform(-sc.drift_ppm, sc.drift_ppm) * 1e-6)
        return int(round(drift[nid][1] * (t - epoch * resync_ns)))

    def start_inference(t):
        nonlocal running
        win = queue.pop(0)
        running = win
        log(t, EventKind.INFERENCE_START, CENTRAL, win.index, len(queue) + 1, _end_ns(win))
        push(t + infer_ns, CENTRAL, EventKind.INFERENCE_DONE, win)

    def _end_ns(win):
        return int(round((win.start_s + win.length_s) * NS))

    def check_windows(t):
        nonlocal next_window, high_water, saturated, last_progress
        while n_windows_max is None or next_window < n_windows_max:
            start_s = next_window * sc.stride_s
            if need_cache[0] != next_window:
                need_cache[:] = [next_window, {nid: _window_groups(by_id[nid].sample_rate_hz, start_s, sc.window_s)
                                               for nid in by_id}]
            need = need_cache[1]
            if any(streams[nid].end < need[nid][1] for nid in by_id):
                return
            codes, degraded = {}, False
            for nid, (i0, i1) in need.items():
                codes[nid], lost = streams[nid].slice(i0, i1)
                degraded |= lost
            win = AssembledWindow(next_window, start_s, sc.window_s, codes, degraded)
            log(t, EventKind.WINDOW_READY, CENTRAL, win.index, int(degraded), _end_ns(win))
            last_progress = t
            next_window += 1
            for nid in by_id:
                streams[nid].trim(_window_groups(by_id[nid].sample_rate_hz, next_window * sc.stride_s,
                                                 sc.window_s)[0])
            queue.append(win)
            backlog = len(queue) + (running is not None)
            if backlog > high_water:
                high_water = backlog
                if backlog > 1 and not saturated:
                    saturated = True
                    diagnostics.append(
                        f"saturation: inference backlog reached {backlog} at t={t / NS:.3f} s "
                        f"(inference {sc.inference_time_s} s vs stride {sc.stride_s} s)")
            if running is None:
                start_inference(t)

    while heap and heap[0][0] < horizon:
        t, nkey, kind, _, payload = heapq.heappop(heap)
        if kind == EventKind.SLOT_START:
            nid = nkey
            node = by_id[nid]
            sf, slot = payload
            log(t, EventKind.SLOT_START, nid, sf, slot)
            push(t + period_ns, nid, EventKind.SLOT_START, (sf + 1, slot))
            tx = t + guard_ns + node_offset(nid, t)
            avail = (tx * node.sample_rate_hz + NS - 1) // NS
            if limits[nid] is not None:
                avail = min(avail, limits[nid])
            while sent[nid] < avail:
                first = sent[nid]
                stop = min(avail, first + node.groups_per_frame)
                frame = encode_frame(nid, first, source.codes(node, first, stop))
                bits = 8 * len(frame)
                log(tx, EventKind.FRAME_TX, nid, first, bits, frame_no)
                end = tx + int(math.ceil(bits * NS / sc.link_rate_bps))
                pos = error_positions(bits, ber, chan_rng)
                push(end, nid, EventKind.FRAME_RX, (flip_bits(frame, pos), len(pos), frame_no, stop - first))
                frame_no += 1
                sent[nid] = stop
                tx = end
        elif kind == EventKind.FRAME_RX:
            owner = nkey
            data, n_err, fno, n_groups = payload
            bits = 8 * len(data)
            dec = decode_frame(data, by_id[owner].n_channels)
            st = streams.get(dec.node_id) if dec.crc_ok else None
            if st is None:
                first = streams[owner].end
                log(t, EventKind.FRAME_CRC_FAIL, owner, first, bits, fno, float(n_err))
                streams[owner].lose(len(dec.codes))
            else:
                first = unwrap_seq(dec.seq, st.end)
                log(t, EventKind.FRAME_RX, dec.node_id, first, bits, fno)
                st.receive(first, dec.codes)
            last_progress = t
            check_windows(t)
        elif kind == EventKind.INFERENCE_DONE:
            win = payload
            score = float(infer(win)) if infer is not None else float("nan")
            running = None
            log(t, EventKind.INFERENCE_DONE, CENTRAL, win.index, len(queue), _end_ns(win), score)
            if score >= sc.alert_threshold:
                log(t, EventKind.ALERT, CENTRAL, win.index, 0, _end_ns(win), score)
            last_progress = t
            if queue:
                start_inference(t)
        exhausted = n_windows_max is not None and next_window >= n_windows_max
        if not exhausted and t - last_progress > watchdog_ns:
            raise SimulationError(f"no progress for {sc.watchdog_s} s of simulated time at t={t / NS:.3f} s")

    out = log.to_log()
    out.horizon_ns = horizon
    out.link_rate_bps = sc.link_rate_bps
    out.period_s = period_ns / NS
    out.node_names = {n.node_id: n.name for n in nodes}
    out.stream_digests = {nid: st.hash.hexdigest() for nid, st in streams.items()}
    out.groups_received = {nid: st.end for nid, st in streams.items()}
    out.diagnostics = diagnostics
    return out


def _stats(values: np.ndarray) -> tuple[float, float]:
    return (float(values.mean()), float(values.max())) if len(values) else (0.0, 0.0)


def latency_report(log: EventLog) -> dict:
    """Summary statistics of a run; every field is 0 for an empty log."""
    alerts = log.select(EventKind.ALERT)
    done = log.select(EventKind.INFERENCE_DONE)
    alert_lat = (log.time_ns[alerts] - log.c[alerts]) / NS
    decision_lat = (log.time_ns[done] - log.c[done]) / NS
    ready = log.select(EventKind.WINDOW_READY)
    tx, rx, fail = (log.select(k) for k in (EventKind.FRAME_TX, EventKind.FRAME_RX, EventKind.FRAME_CRC_FAIL))
    starts = log.select(EventKind.INFERENCE_START)
    high_water = 0
    if len(ready):
        # backlog right after each arrival = queued + running
        events = np.sort(np.concatenate([ready, done]))
        level = np.cumsum(np.where(log.kind[events] == int(EventKind.WINDOW_READY), 1, -1))
        high_water = int(level.max())
    tx_bits = int(log.b[tx].sum())
    rx_bits = int(log.b[rx].sum() + log.b[fail].sum())
    mean_alert, max_alert = _stats(alert_lat)
    mean_dec, max_dec = _stats(decision_lat)
    return {
        "windows": int(len(ready)),
        "windows_degraded": int(log.b[ready].sum()) if len(ready) else 0,
        "inferences": int(len(starts)),
        "alerts": int(len(alerts)),
        "mean_alert_latency_s": mean_alert,
        "max_alert_latency_s": max_alert,
        "mean_decision_latency_s": mean_dec,
        "max_decision_latency_s": max_dec,
        "frames_tx": int(len(tx)),
        "frames_rx": int(len(rx)),
        "frames_lost": int(len(fail)),
        "frames_in_flight": int(len(tx) - len(rx) - len(fail)),
        "bits_tx": tx_bits,
        "bit_errors": int(log.x[fail].sum()) if len(fail) else 0,
        "backlog_high_water": high_water,
        "saturated": int(high_water > 1),
        "energy_tx_j": tx_bits * TX_PJ_PER_BIT * 1e-12,
        "energy_rx_j": rx_bits * RX_PJ_PER_BIT * 1e-12,
    }


def write_summary_csv(report: dict, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        for k in sorted(report):
            w.writerow([k, repr(report[k]) if isinstance(report[k], float) else report[k]])


def find_collisions(log: EventLog) -> list[tuple[int, int]]:
    """Pairs of frame indices (in tx order) whose airtime overlaps across different nodes."""
    tx = log.select(EventKind.FRAME_TX)
    if len(tx) < 2:
        return []
    order = tx[np.lexsort((log.node[tx], log.time_ns[tx]))]
    start = log.time_ns[order]
    end = start + log.airtime_ns(log.b[order])
    nodes = log.node[order]
    hits = []
    reach_end, reach_idx = end[0], 0
    for i in range(1, len(order)):
        if start[i] < reach_end and nodes[i] != nodes[reach_idx]:
            hits.append((int(log.c[order[reach_idx]]), int(log.c[order[i]])))
        if end[i] > reach_end:
            reach_end, reach_idx = end[i], i
    return hits


def check_conservation(log: EventLog) -> bool:
    """Every received or failed frame has a transmission; the remainder is in flight at the horizon."""
    tx = log.select(EventKind.FRAME_TX)
    done = np.concatenate([log.select(EventKind.FRAME_RX), log.select(EventKind.FRAME_CRC_FAIL)])
    tx_ids, done_ids = log.c[tx], log.c[done]
    if len(np.unique(done_ids)) != len(done_ids) or not np.isin(done_ids, tx_ids).all():
        return False
    pending = np.setdiff1d(tx_ids, done_ids)
    if len(pending) == 0:
        return True
    pending_tx = tx[np.isin(tx_ids, pending)]
    ends = log.time_ns[pending_tx] + log.airtime_ns(log.b[pending_tx])
    return bool((ends >= log.horizon_ns).all())


def write_log(log: EventLog, directory) -> dict:
    """Export events (JSONL), the summary (CSV) and run metadata (JSON)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    log.write_jsonl(d / "events.jsonl")
    report = latency_report(log)
    write_summary_csv(report, d / "summary.csv")
    meta = {"horizon_s": log.horizon_ns / NS, "period_s": log.period_s,
            "nodes": {str(k): v for k, v in sorted(log.node_names.items())},
            "stream_digests": {str(k): v for k, v in sorted(log.stream_digests.items())},
            "groups_received": {str(k): v for k, v in sorted(log.groups_received.items())},
            "diagnostics": list(log.diagnostics), "event_digest": log.digest()}
    (d / "run.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return report
