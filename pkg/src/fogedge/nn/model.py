"""Layer and model descriptions for the multi-branch depth-wise CNN."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Union

import numpy as np

from ..errors import ShapeError
from ..signals import MODALITY_ORDER, ModalityKind, Window, parse_modality


@dataclass(frozen=True)
class DepthwiseConv1D:
    kernel_len: int
    stride: int = 1
    channels: int = 1
    padding: str = "valid"
    multiplier: int = 1

    @property
    def out_channels(self) -> int:
        return self.channels * self.multiplier

    def pads(self, t_in: int) -> tuple[int, int]:
        if self.padding == "valid":
            return 0, 0
        t_out = -(-t_in // self.stride)
        total = max((t_out - 1) * self.stride + self.kernel_len - t_in, 0)
        return total // 2, total - total // 2

    def out_len(self, t_in: int) -> int:
        left, right = self.pads(t_in)
        return (t_in + left + right - self.kernel_len) // self.stride + 1


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class Concat:
    axis: int = 1


@dataclass(frozen=True)
class Dense:
    in_dim: int
    out_dim: int


@dataclass(frozen=True)
class GlobalStats:
    """Mean over the time axis."""


@dataclass(frozen=True)
class Sigmoid:
    pass


LayerSpec = Union[DepthwiseConv1D, ReLU, Concat, Dense, GlobalStats, Sigmoid]
_LAYER_TYPES = {cls.__name__: cls for cls in (DepthwiseConv1D, ReLU, Concat, Dense, GlobalStats, Sigmoid)}


def layer_to_dict(layer) -> dict:
    return {"type": type(layer).__name__, **asdict(layer)}


def layer_from_dict(d: dict):
    d = dict(d)
    return _LAYER_TYPES[d.pop("type")](**d)


@dataclass(frozen=True)
class BranchSpec:
    name: str
    modality: ModalityKind
    layers: tuple

    def conv_paths(self) -> list[tuple[str, DepthwiseConv1D]]:
        out, i = [], 0
        for layer in self.layers:
            if isinstance(layer, DepthwiseConv1D):
                out.append((f"{self.name}.conv{i}", layer))
                i += 1
        return out


@dataclass(frozen=True)
class ModelSpec:
    """Branches per modality, a concat merge, and a dense head ending in a sigmoid.

    ``inputs`` maps modality -> (channels, samples); ``input_scales`` holds the
    fixed multiplier applied to raw window samples before the first layer.
    """

    branches: tuple
    head: tuple
    inputs: dict
    input_scales: dict = field(default_factory=dict)
    merge: Concat = Concat(1)

    def modalities(self) -> list[ModalityKind]:
        present = {b.modality for b in self.branches}
        return [m for m in MODALITY_ORDER if m in present]

    def scale(self, modality: ModalityKind) -> float:
        return float(self.input_scales.get(modality, 1.0))

    def dense_paths(self) -> list[tuple[str, Dense]]:
        dense = [layer for layer in self.head if isinstance(layer, Dense)]
        return [(f"head.dense{i}", layer) for i, layer in enumerate(dense)]

    def weight_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        for br in self.branches:
            for path, conv in br.conv_paths():
                shapes[f"{path}.weight"] = (conv.out_channels, conv.kernel_len)
                shapes[f"{path}.bias"] = (conv.out_channels,)
        for path, d in self.dense_paths():
            shapes[f"{path}.weight"] = (d.out_dim, d.in_dim)
            shapes[f"{path}.bias"] = (d.out_dim,)
        return shapes

    def branch_features(self, branch: BranchSpec) -> int:
        c, t = self.inputs[branch.modality]
        for layer in branch.layers:
            if isinstance(layer, DepthwiseConv1D):
                if layer.channels != c:
                    raise ShapeError(f"{branch.name}: conv expects {layer.channels} channels, got {c}")
                if layer.stride < 1 or layer.kernel_len < 1:
                    raise ShapeError(f"{branch.name}: bad stride/kernel")
                if layer.padding not in ("valid", "same"):
                    raise ShapeError(f"{branch.name}: unknown padding {layer.padding!r}")
                t = layer.out_len(t)
                if t < 1:
                    raise ShapeError(f"{branch.name}: time axis collapses to {t}")
                c = layer.out_channels
            elif isinstance(layer, GlobalStats):
                t = 1
            elif not isinstance(layer, ReLU):
                raise ShapeError(f"{branch.name}: layer {type(layer).__name__} not allowed in a branch")
        if not isinstance(branch.layers[-1], GlobalStats):
            raise ShapeError(f"{branch.name}: branch must end with GlobalStats")
        return c

    def feature_dim(self) -> int:
        return sum(self.branch_features(b) for b in self.branches)

    def validate(self) -> "ModelSpec":
        if not self.branches:
            raise ShapeError("model needs at least one branch")
        names = [b.name for b in self.branches]
        if len(set(names)) != len(names):
            raise ShapeError("branch names must be unique")
        for m in self.modalities():
            if m not in self.inputs:
                raise ShapeError(f"no input geometry for {m.value}")
            paths = [b for b in self.branches if b.modality == m]
            if m == ModalityKind.EEG:
                kernels = {b.conv_paths()[0][1].kernel_len for b in paths if b.conv_paths()}
                if len(paths) != 2 or len(kernels) != 2:
                    raise ShapeError("EEG needs exactly two paths with different kernel lengths")
            elif len(paths) != 1:
                raise ShapeError(f"{m.value} needs exactly one path")
        width = self.feature_dim()
        dense = [layer for layer in self.head if isinstance(layer, Dense)]
        if len(dense) != 3:
            raise ShapeError("head must have exactly three Dense layers")
        if not isinstance(self.head[-1], Sigmoid):
            raise ShapeError("head must end with Sigmoid")
        for layer in self.head[:-1]:
            if isinstance(layer, Dense):
                if layer.in_dim != width:
                    raise ShapeError(f"dense layer expects {layer.in_dim} inputs, got {width}")
                width = layer.out_dim
            elif not isinstance(layer, ReLU):
                raise ShapeError(f"layer {type(layer).__name__} not allowed in the head")
        if width != 1:
            raise ShapeError("final output dimension must be 1")
        return self

    def restrict(self, modalities) -> "ModelSpec":
        """Keep only the branches of ``modalities``; the head input width is rebuilt."""
        keep = {parse_modality(m) for m in modalities}
        if not keep:
            raise ShapeError("modality subset must be non-empty")
        branches = tuple(b for b in self.branches if b.modality in keep)
        missing = keep - {b.modality for b in branches}
        if missing:
            raise ShapeError(f"model has no branch for {sorted(m.value for m in missing)}")
        partial = replace(self, branches=branches,
                          inputs={m: g for m, g in self.inputs.items() if m in keep},
                          input_scales={m: s for m, s in self.input_scales.items() if m in keep})
        width = partial.feature_dim()
        head, first = [], True
        for layer in self.head:
            if isinstance(layer, Dense) and first:
                layer, first = Dense(width, layer.out_dim), False
            head.append(layer)
        return replace(partial, head=tuple(head)).validate()

    def to_dict(self) -> dict:
        return {
            "branches": [{"name": b.name, "modality": b.modality.value,
                          "layers": [layer_to_dict(x) for x in b.layers]} for b in self.branches],
            "head": [layer_to_dict(x) for x in self.head],
            "inputs": {m.value: list(g) for m, g in self.inputs.items()},
            "input_scales": {m.value: float(s) for m, s in self.input_scales.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            branches=tuple(BranchSpec(b["name"], parse_modality(b["modality"]),
                                      tuple(layer_from_dict(x) for x in b["layers"]))
                           for b in d["branches"]),
            head=tuple(layer_from_dict(x) for x in d["head"]),
            inputs={parse_modality(m): tuple(g) for m, g in d["inputs"].items()},
            input_scales={parse_modality(m): float(s) for m, s in d.get("input_scales", {}).items()},
        ).validate()


def _path(name, modality, channels, kernel, n_layers, stride, multiplier):
    layers, c = [], channels
    for i in range(n_layers):
        conv = DepthwiseConv1D(kernel, stride, c, "valid", multiplier if i == 0 else 1)
        layers += [conv, ReLU()]
        c = conv.out_channels
    return BranchSpec(name, modality, tuple(layers) + (GlobalStats(),))


def default_model_spec(inputs: dict, eeg_kernels=(32, 8), emg_kernel: int = 16, acc_kernel: int = 16,
                       n_layers: int = 2, stride: int = 2, head_dims=(64, 32),
                       multiplier: int = 1, input_scales: dict | None = None) -> ModelSpec:
    """Default architecture: two EEG paths, one EMG path, one ACC path, 3-layer head."""
    inputs = {parse_modality(m): tuple(int(v) for v in g) for m, g in inputs.items()}
    branches = []
    if ModalityKind.EEG in inputs:
        c = inputs[ModalityKind.EEG][0]
        branches.append(_path("eeg_lo", ModalityKind.EEG, c, eeg_kernels[0], n_layers, stride, multiplier))
        branches.append(_path("eeg_hi", ModalityKind.EEG, c, eeg_kernels[1], n_layers, stride, multiplier))
    if ModalityKind.EMG in inputs:
        branches.append(_path("emg", ModalityKind.EMG, inputs[ModalityKind.EMG][0], emg_kernel,
                              n_layers, stride, multiplier))
    if ModalityKind.ACC in inputs:
        branches.append(_path("acc", ModalityKind.ACC, inputs[ModalityKind.ACC][0], acc_kernel,
                              n_layers, stride, multiplier))
    partial = ModelSpec(tuple(branches), (), inputs, dict(input_scales or {}))
    width = partial.feature_dim()
    h1, h2 = head_dims
    head = (Dense(width, h1), ReLU(), Dense(h1, h2), ReLU(), Dense(h2, 1), Sigmoid())
    return replace(partial, head=head).validate()


def window_geometry(w: Window) -> dict:
    return {m: tuple(b.shape) for m, b in w.blocks.items()}


def stack_inputs(spec: ModelSpec, windows) -> dict[ModalityKind, np.ndarray]:
    """Stack window blocks into (batch, channels, samples) float64 arrays per modality."""
    if not windows:
        raise ShapeError("no windows to stack")
    out = {}
    for m in spec.modalities():
        want = tuple(spec.inputs[m])
        blocks = []
        for w in windows:
            b = w.blocks.get(m)
            if b is None or tuple(b.shape) != want:
                got = None if b is None else tuple(b.shape)
                raise ShapeError(f"{w.subject_id}@{w.start_s}s: {m.value} block {got}, model expects {want}")
            blocks.append(b)
        out[m] = np.stack(blocks).astype(np.float64)
    return out


def labels_of(windows) -> np.ndarray:
    if any(w.label is None for w in windows):
        raise ShapeError("windows must be labeled")
    return np.array([w.label for w in windows], dtype=np.float64)


def fit_input_scales(spec: ModelSpec, windows) -> ModelSpec:
    """Set each modality's input scale to 1/std of its samples over ``windows``."""
    scales = {}
    for m, x in stack_inputs(spec, windows).items():
        sd = float(np.std(x))
        scales[m] = 1.0 / sd if sd > 0 else 1.0
    return replace(spec, input_scales=scales)
