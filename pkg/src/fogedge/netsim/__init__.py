"""Body-area network: radio channel, frames, TDMA schedule and event simulation."""

from .channel import ChannelModel, ber_majority, error_positions, flip_bits, solve_pulse_error_for_ber
from .frames import DecodedFrame, crc16, decode_frame, encode_frame, frame_bits, unwrap_seq
from .inference import ConstantInference, FloatInference, QuantizedInference
from .schedule import NodeConfig, TdmaSchedule, build_schedule, default_patch_nodes
from .sim import (AssembledWindow, EventKind, EventLog, Scenario, check_conservation, find_collisions,
                  latency_report, run_simulation, write_log)
from .sources import RecordingSource, SyntheticSource, patch_nodes_for, source_digest

__all__ = [
    "AssembledWindow", "ChannelModel", "ConstantInference", "DecodedFrame", "EventKind", "EventLog",
    "FloatInference", "NodeConfig", "QuantizedInference", "RecordingSource", "Scenario", "SyntheticSource",
    "TdmaSchedule", "ber_majority", "build_schedule", "check_conservation", "crc16", "decode_frame",
    "default_patch_nodes", "encode_frame", "error_positions", "find_collisions", "flip_bits", "frame_bits",
    "latency_report", "patch_nodes_for", "run_simulation", "solve_pulse_error_for_ber", "source_digest",
    "unwrap_seq", "write_log",
]
