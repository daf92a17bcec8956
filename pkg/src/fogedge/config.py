"""Experiment configuration: one YAML document drives every command."""

from __future__ import annotations

import copy
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .compression import CompressionConfig
from .errors import ConfigError
from .evaluation.cohort import PROFILES
from .evaluation.loo import AblationSpec, WindowingConfig
from .netsim.sim import Scenario
from .nn.train import TrainConfig
from .signals import parse_modality

CONFIG_SCHEMA_VERSION = 1
OUTPUT_ROOT_ENV = "FOGEDGE_OUTPUT_ROOT"


@dataclass(frozen=True)
class SyntheticCohortConfig:
    n_subjects: int = 12
    windows_per_subject: int = 40
    effect_profile: str = "complementary"
    seed: int = 7

    def validate(self) -> "SyntheticCohortConfig":
        if self.n_subjects < 2:
            raise ConfigError("a cohort needs at least 2 subjects for leave-one-out testing")
        if self.windows_per_subject < 1:
            raise ConfigError("windows_per_subject must be >= 1")
        if self.effect_profile not in PROFILES:
            raise ConfigError(f"unknown effect profile {self.effect_profile!r}; choose from {sorted(PROFILES)}")
        return self


@dataclass(frozen=True)
class DatasetConfig:
    # "synthetic": generated from ``synthetic``; "manifest": loaded from ``manifest``
    source: str = "synthetic"
    manifest: str | None = None
    synthetic: SyntheticCohortConfig = SyntheticCohortConfig()
    # list of [modality, channel]; null keeps every channel
    channels: tuple | None = None

    def validate(self) -> "DatasetConfig":
        if self.source not in ("synthetic", "manifest"):
            raise ConfigError(f"dataset.source must be 'synthetic' or 'manifest', got {self.source!r}")
        if self.source == "manifest" and not self.manifest:
            raise ConfigError("dataset.manifest is required when dataset.source is 'manifest'")
        if self.channels is not None:
            for item in self.channels:
                if len(item) != 2:
                    raise ConfigError(f"channel entries must be [modality, name], got {item!r}")
                parse_modality(item[0])
        self.synthetic.validate()
        return self


@dataclass(frozen=True)
class ModelConfig:
    eeg_kernels: tuple = (32, 8)
    emg_kernel: int = 16
    acc_kernel: int = 16
    n_layers: int = 2
    stride: int = 2
    head_dims: tuple = (64, 32)
    multiplier: int = 1

    def validate(self) -> "ModelConfig":
        if len(self.eeg_kernels) != 2 or len(self.head_dims) != 2:
            raise ConfigError("model.eeg_kernels and model.head_dims need exactly two entries")
        if min(*self.eeg_kernels, self.emg_kernel, self.acc_kernel, self.n_layers, self.stride,
               *self.head_dims, self.multiplier) < 1:
            raise ConfigError("model sizes must be positive integers")
        return self


@dataclass(frozen=True)
class EvaluationConfig:
    compressed: bool = True
    ablation: bool = True
    subsets: tuple = AblationSpec().subsets
    retrain_branches: bool = True
    n_boot: int = 1000
    seed: int = 0

    def validate(self) -> "EvaluationConfig":
        if self.n_boot < 0:
            raise ConfigError("evaluation.n_boot must be >= 0")
        self.ablation_spec().validate()
        return self

    def ablation_spec(self) -> AblationSpec:
        return AblationSpec(tuple(tuple(s) for s in self.subsets), self.retrain_branches)


@dataclass(frozen=True)
class NetsimConfig:
    scenario: Scenario = Scenario(duration_s=600.0)
    # "quantized" | "float" (trained artifacts in the output directory) or "constant"
    inference: str = "quantized"
    constant_score: float = 1.0
    # streamed recording: a synthetic subject of scenario.duration_s seconds
    recording_seed: int = 101

    def validate(self) -> "NetsimConfig":
        if self.inference not in ("quantized", "float", "constant"):
            raise ConfigError(f"netsim.inference must be quantized, float or constant, got {self.inference!r}")
        self.scenario.validate()
        return self


@dataclass(frozen=True)
class ExperimentConfig:
    output_dir: str = "run"
    dataset: DatasetConfig = DatasetConfig()
    windowing: WindowingConfig = WindowingConfig()
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    compression: CompressionConfig = CompressionConfig()
    evaluation: EvaluationConfig = EvaluationConfig()
    netsim: NetsimConfig = NetsimConfig()
    jobs: int = 1
    schema_version: int = CONFIG_SCHEMA_VERSION

    def validate(self) -> "ExperimentConfig":
        if self.schema_version != CONFIG_SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema_version {self.schema_version}")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        w = self.windowing
        if w.length_s <= 0 or w.stride_s <= 0 or not 0 < w.label_threshold <= 1:
            raise ConfigError("windowing needs positive length/stride and a label threshold in (0, 1]")
        self.dataset.validate()
        self.model.validate()
        self.train.validate()
        self.compression.validate()
        self.evaluation.validate()
        self.netsim.validate()
        return self

    def output_path(self) -> Path:
        p = Path(self.output_dir)
        if not p.is_absolute():
            p = Path(os.environ.get(OUTPUT_ROOT_ENV, ".")) / p
        return p

    def to_dict(self) -> dict:
        return _plain(asdict(self))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, data, where: str):
    """Instantiate nested frozen dataclasses from plain mappings, rejecting unknown keys."""
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown keys {unknown}")
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        default = getattr(defaults, name)
        key = f"{where}.{name}" if where else name
        if hasattr(default, "__dataclass_fields__"):
            kwargs[name] = _build(type(default), value, key)
        elif isinstance(default, tuple) or (name in ("channels", "subsets", "frozen") and value is not None):
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{key}: expected a list")
            kwargs[name] = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        else:
            kwargs[name] = value
    try:
        return replace(defaults, **kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from None


def config_from_dict(doc: dict | None) -> ExperimentConfig:
    doc = copy.deepcopy(doc or {})
    cfg = _build(ExperimentConfig, doc, "")
    try:
        return cfg.validate()
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def apply_override(doc: dict, assignment: str) -> dict:
    """Apply ``a.b.c=value`` (value parsed as YAML) to a nested mapping."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} must look like key.path=value")
    key, raw = assignment.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {assignment!r}: {exc}") from None
    if isinstance(value, str):
        # YAML 1.1 reads exponents without a dot ("1e-3") as strings
        try:
            value = float(value)
        except ValueError:
            pass
    node = doc
    parts = key.strip().split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {assignment!r}: {p} is not a section")
    node[parts[-1]] = value
    return doc


def load_config(path=None, overrides=()) -> ExperimentConfig:
    doc = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            doc = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{p}: unparseable YAML ({exc})") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{p}: top level must be a mapping")
    for o in overrides:
        apply_override(doc, o)
    return config_from_dict(doc)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True, default_flow_style=False)
