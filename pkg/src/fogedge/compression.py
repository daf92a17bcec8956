"""Magnitude pruning, post-training int8 quantization and integer inference.

Integer path conventions:

- weights: symmetric per-tensor int8, ``scale = max|w| / 127``, zero point 0;
- biases: int32 in units of ``weight_scale * input_scale``;
- activations: signed tensors use symmetric int8 (zero point 0), post-ReLU
  tensors use the full [-128, 127] range with zero point -128;
- requantization multiplies the int32 accumulator by a fixed-point
  multiplier ``M0 * 2**-shift`` with ``M0`` in [2**30, 2**31);
- every rounding step is round-half-away-from-zero;
- only the final logit is converted to float, for the sigmoid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import container
from .errors import ConfigError, DataError, ShapeError
from .frontend import round_half_away
from .nn.engine import LOGIT_CLAMP, _conv_fwd, _pad, forward_logits, predict_proba, sigmoid
from .nn.model import Dense, DepthwiseConv1D, GlobalStats, ModelSpec, ReLU, stack_inputs
from .nn.train import TrainConfig, train_arrays

SCALE_FLOOR = 1e-8
QMIN, QMAX = -128, 127


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int = 0

    def quantize(self, x) -> np.ndarray:
        q = round_half_away(np.asarray(x, dtype=np.float64) / self.scale) + self.zero_point
        return np.clip(q, QMIN, QMAX).astype(np.int64)

    def dequantize(self, q) -> np.ndarray:
        return self.scale * (np.asarray(q, dtype=np.float64) - self.zero_point)


def symmetric_qparams(max_abs: float) -> QuantParams:
    if not max_abs > 0:
        return QuantParams(SCALE_FLOOR, 0)
    return QuantParams(max_abs / 127.0, 0)


def relu_qparams(max_val: float) -> QuantParams:
    """Non-negative range [0, max] mapped onto the whole int8 range."""
    if not max_val > 0:
        return QuantParams(SCALE_FLOOR, 0)
    return QuantParams(max_val / 255.0, QMIN)


# ---------------------------------------------------------------------------
# pruning


def prune_magnitude(params: dict, sparsity: float) -> tuple[dict, dict]:
    """Zero the globally smallest-|w| fraction of weights (biases exempt).

    Returns the pruned parameters and a boolean keep-mask per weight tensor.
    """
    if not 0 <= sparsity < 1:
        raise ValueError(f"sparsity must lie in [0, 1), got {sparsity}")
    keys = [k for k in params if k.endswith(".weight")]
    flat = np.concatenate([np.abs(np.ravel(params[k])) for k in keys]) if keys else np.zeros(0)
    n_prune = int(round(sparsity * flat.size))
    keep = np.ones(flat.size, dtype=bool)
    if n_prune:
        keep[np.argsort(flat, kind="stable")[:n_prune]] = False
    out = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    masks, off = {}, 0
    for k in keys:
        size = np.size(params[k])
        m = keep[off:off + size].reshape(np.shape(params[k]))
        off += size
        masks[k] = m
        out[k] = np.where(m, out[k], 0.0)
    return out, masks


# ---------------------------------------------------------------------------
# calibration


def _relu_after(layers) -> dict[int, bool]:
    """For each conv/dense layer index, whether a ReLU follows it."""
    return {i: i + 1 < len(layers) and isinstance(layers[i + 1], ReLU)
            for i, x in enumerate(layers) if isinstance(x, (DepthwiseConv1D, Dense))}


def _branch_points(branch) -> dict[str, bool]:
    flags = list(_relu_after(branch.layers).values())
    return {path: flag for (path, _), flag in zip(branch.conv_paths(), flags)}


def trace_activations(spec: ModelSpec, params: dict, inputs: dict) -> dict[str, np.ndarray]:
    """Float activations at every quantization point, for a stacked batch."""
    acts = {}
    feats = []
    for br in spec.branches:
        h = inputs[br.modality] * spec.scale(br.modality)
        acts[f"{br.name}.input"] = h
        paths = iter(br.conv_paths())
        last = None
        for layer in br.layers:
            if isinstance(layer, DepthwiseConv1D):
                path, _ = next(paths)
                h = _conv_fwd(h, params[f"{path}.weight"], params[f"{path}.bias"], layer)
                last = path
                acts[path] = h
            elif isinstance(layer, ReLU):
                h = np.maximum(h, 0.0)
                if last is not None:
                    acts[last] = h
            elif isinstance(layer, GlobalStats):
                h = h.mean(axis=2)
                acts[f"{br.name}.pool"] = h
        feats.append(h)
    h = np.concatenate(feats, axis=1)
    dense = iter(spec.dense_paths())
    last = None
    for layer in spec.head:
        if isinstance(layer, Dense):
            path, _ = next(dense)
            h = h @ params[f"{path}.weight"].T + params[f"{path}.bias"]
            last = path
            acts[path] = h
        elif isinstance(layer, ReLU):
            h = np.maximum(h, 0.0)
            acts[last] = h
    return acts


def calibrate_activations(spec: ModelSpec, params: dict, calibration_windows,
                          batch_size: int = 256) -> dict[str, QuantParams]:
    """Per-point QuantParams from the min/max observed over the calibration windows."""
    if not calibration_windows:
        raise DataError("calibration needs at least one window")
    lo, hi = {}, {}
    for i in range(0, len(calibration_windows), batch_size):
        acts = trace_activations(spec, params, stack_inputs(spec, calibration_windows[i:i + batch_size]))
        for k, a in acts.items():
            lo[k] = min(lo.get(k, math.inf), float(a.min()))
            hi[k] = max(hi.get(k, -math.inf), float(a.max()))
    final = spec.dense_paths()[-1][0]
    out = {}
    for k in lo:
        if k == final:
            continue
        if lo[k] >= 0:
            out[k] = relu_qparams(hi[k])
        else:
            out[k] = symmetric_qparams(max(abs(lo[k]), abs(hi[k])))
    return out


# ---------------------------------------------------------------------------
# quantized model


def quantize_weight(w) -> tuple[np.ndarray, QuantParams]:
    w = np.asarray(w, dtype=np.float64)
    qp = symmetric_qparams(float(np.max(np.abs(w))) if w.size else 0.0)
    q = np.clip(round_half_away(w / qp.scale), -127, 127).astype(np.int8)
    return q, qp


def quantize_multiplier(m: float) -> tuple[int, int]:
    """Fixed-point form of a positive real: m ~= M0 * 2**-shift, M0 in [2**30, 2**31)."""
    if not m > 0:
        return 0, 0
    mant, exp = math.frexp(m)
    m0 = int(math.floor(mant * (1 << 31) + 0.5))
    if m0 == 1 << 31:
        m0 //= 2
        exp += 1
    return m0, 31 - exp


def fixed_point_mul(acc: np.ndarray, m0: int, shift: int) -> np.ndarray:
    """round_half_away(acc * M0 / 2**shift) in int64 arithmetic."""
    acc = np.asarray(acc, dtype=np.int64)
    if np.any(np.abs(acc) >= 1 << 31):
        raise OverflowError("accumulator exceeds int32 range")
    prod = acc * np.int64(m0)
    if shift <= 0:
        return prod << np.int64(-shift)
    if shift >= 63:
        return np.zeros_like(prod)
    mag = (np.abs(prod) + np.int64(1 << (shift - 1))) >> np.int64(shift)
    return np.sign(prod) * mag


@dataclass
class QuantizedModel:
    """Integer model. The first dense layer consumes the concatenated pooled
    features directly: each branch keeps its own pooled scale, which is folded
    into the columns of that layer's weights before they are quantized."""

    spec: ModelSpec
    weights: dict
    weight_qparams: dict
    biases: dict
    bias_scales: dict
    act_qparams: dict
    nonzero: dict = field(default_factory=dict)


def _input_point(spec: ModelSpec) -> dict[str, str | None]:
    """Maps each conv/dense path to the activation point feeding it (None: the concat)."""
    src = {}
    for br in spec.branches:
        prev = f"{br.name}.input"
        for path, _ in br.conv_paths():
            src[path] = prev
            prev = path
    prev = None
    for path, _ in spec.dense_paths():
        src[path] = prev
        prev = path
    return src


def _concat_scales(spec: ModelSpec, act_qparams: dict) -> np.ndarray:
    return np.concatenate([np.full(spec.branch_features(br), act_qparams[f"{br.name}.pool"].scale)
                           for br in spec.branches])


def quantize_model(spec: ModelSpec, params: dict, masks: dict | None,
                   act_qparams: dict) -> QuantizedModel:
    src = _input_point(spec)
    weights, wq, biases, bscales, nonzero = {}, {}, {}, {}, {}
    for path, point in src.items():
        w = np.asarray(params[f"{path}.weight"], dtype=np.float64)
        if masks and f"{path}.weight" in masks:
            w = np.where(masks[f"{path}.weight"], w, 0.0)
        if point is None:
            # fold the per-branch input scales into the columns; inputs are then raw integers
            w = w * _concat_scales(spec, act_qparams)[None, :]
            s_in = 1.0
        else:
            s_in = act_qparams[point].scale
        q, qp = quantize_weight(w)
        bscale = qp.scale * s_in
        b = round_half_away(np.asarray(params[f"{path}.bias"], dtype=np.float64) / bscale)
        weights[path], wq[path] = q, qp
        biases[path] = np.clip(b, -(2**31), 2**31 - 1).astype(np.int32)
        bscales[path] = bscale
        nonzero[path] = int(np.count_nonzero(q))
    return QuantizedModel(spec, weights, wq, biases, bscales, dict(act_qparams), nonzero)


def _requant(acc, scale_in: float, out: QuantParams, relu: bool) -> np.ndarray:
    m0, shift = quantize_multiplier(scale_in / out.scale)
    q = fixed_point_mul(acc, m0, shift) + out.zero_point
    return np.clip(q, out.zero_point if relu else QMIN, QMAX)


def _int_conv(xz: np.ndarray, w: np.ndarray, b: np.ndarray, layer: DepthwiseConv1D) -> np.ndarray:
    # xz already has the zero point removed, so zero padding pads with the zero point
    xz = _pad(xz, layer)
    view = sliding_window_view(xz, layer.kernel_len, axis=2)[:, :, ::layer.stride, :]
    return np.einsum("bctk,ck->bct", view, w.astype(np.int64)) + b.astype(np.int64)[None, :, None]


def quantized_logits(qm: QuantizedModel, inputs: dict) -> np.ndarray:
    spec = qm.spec
    feats = []
    for br in spec.branches:
        if br.modality not in inputs:
            raise ShapeError(f"batch lacks {br.modality.value} input")
        qp = qm.act_qparams[f"{br.name}.input"]
        q = qp.quantize(inputs[br.modality] * spec.scale(br.modality))
        points = _branch_points(br)
        paths = iter(br.conv_paths())
        for layer in br.layers:
            if isinstance(layer, DepthwiseConv1D):
                path, _ = next(paths)
                acc = _int_conv(q - qp.zero_point, qm.weights[path], qm.biases[path], layer)
                qp_out = qm.act_qparams[path]
                q = _requant(acc, qm.bias_scales[path], qp_out, points[path])
                qp = qp_out
            elif isinstance(layer, GlobalStats):
                # the int32 sum carries scale s/T and is rounded once, into the pool scale
                pool_qp = qm.act_qparams[f"{br.name}.pool"]
                q = _requant((q - qp.zero_point).sum(axis=2), qp.scale / q.shape[2], pool_qp, relu=False)
                qp = pool_qp
        feats.append(q - qp.zero_point)
    q = np.concatenate(feats, axis=1)
    qp = QuantParams(1.0, 0)
    dense = spec.dense_paths()
    relu_flags = list(_relu_after(spec.head).values())
    for n, ((path, _), relu) in enumerate(zip(dense, relu_flags)):
        acc = (q - qp.zero_point) @ qm.weights[path].astype(np.int64).T + qm.biases[path].astype(np.int64)
        if n == len(dense) - 1:
            return acc[:, 0].astype(np.float64) * qm.bias_scales[path]
        qp_out = qm.act_qparams[path]
        q = _requant(acc, qm.bias_scales[path], qp_out, relu)
        qp = qp_out
    raise ShapeError("head has no dense layers")


def quantized_predict_proba(qm: QuantizedModel, windows, batch_size: int = 256) -> np.ndarray:
    out = []
    for i in range(0, len(windows), batch_size):
        z = quantized_logits(qm, stack_inputs(qm.spec, windows[i:i + batch_size]))
        out.append(sigmoid(np.clip(z, -LOGIT_CLAMP, LOGIT_CLAMP)))
    return np.concatenate(out) if out else np.zeros(0)


def quantized_forward(qm: QuantizedModel, w) -> float:
    return float(quantized_predict_proba(qm, [w])[0])


@dataclass(frozen=True)
class CompressionConfig:
    """Pruning sparsity, recovery fine-tuning and output options.

    After pruning, the surviving weights are fine-tuned with the pruning mask
    held fixed, using the unpruned model's probabilities on the same training
    windows as soft targets. ``finetune_epochs = 0`` gives plain one-shot
    pruning.

    By default the compressed model is deployed at the float model's operating
    point; ``refit_threshold`` re-picks it on the compressed training scores.
    """

    sparsity: float = 0.5
    quantize: bool = True
    sparse_encoding: bool = True
    finetune_epochs: int = 40
    finetune_lr: float = 1e-3
    finetune_seed: int = 1
    # False: the compressed model inherits the float model's decision threshold
    refit_threshold: bool = False

    def validate(self) -> "CompressionConfig":
        if not 0 <= self.sparsity < 1:
            raise ConfigError(f"sparsity must lie in [0, 1), got {self.sparsity}")
        if self.finetune_epochs < 0:
            raise ConfigError("finetune_epochs must be >= 0")
        if not self.finetune_lr > 0:
            raise ConfigError("finetune_lr must be positive")
        return self


@dataclass
class CompressionResult:
    params: dict
    masks: dict
    model: QuantizedModel | None

    def predict_proba(self, spec: ModelSpec, windows) -> np.ndarray:
        if self.model is not None:
            return quantized_predict_proba(self.model, windows)
        return predict_proba(spec, self.params, windows)


def compress(spec: ModelSpec, params: dict, calibration_windows,
             cfg: CompressionConfig = CompressionConfig()) -> CompressionResult:
    """prune -> fine-tune under the mask -> calibrate -> quantize.

    ``calibration_windows`` are training windows; they drive both the
    fine-tuning targets and the activation ranges.
    """
    cfg.validate()
    if not calibration_windows:
        raise DataError("compression needs calibration windows")
    pruned, masks = prune_magnitude(params, cfg.sparsity)
    if cfg.sparsity > 0 and cfg.finetune_epochs > 0:
        inputs = stack_inputs(spec, calibration_windows)
        targets = sigmoid(np.clip(forward_logits(spec, params, inputs), -LOGIT_CLAMP, LOGIT_CLAMP))
        tcfg = TrainConfig(epochs=cfg.finetune_epochs, lr=cfg.finetune_lr, seed=cfg.finetune_seed,
                           pos_weight=1.0)
        pruned = train_arrays(spec, inputs, targets, tcfg, init=pruned, masks=masks).params
    model = None
    if cfg.quantize:
        act = calibrate_activations(spec, pruned, calibration_windows)
        model = quantize_model(spec, pruned, masks, act)
    return CompressionResult(pruned, masks, model)


def size_breakdown(spec: ModelSpec, params: dict, result: CompressionResult, sparse_encoding: bool = True) -> dict:
    """Serialized bytes of the float, pruned-sparse float, dense int8 and final containers."""
    float_bytes = model_size_bytes(params, False, spec)
    pruned_bytes = model_size_bytes(result.params, True, spec)
    int8_bytes = model_size_bytes(result.model, False) if result.model is not None else None
    if result.model is not None:
        final = model_size_bytes(result.model, sparse_encoding)
    else:
        final = model_size_bytes(result.params, sparse_encoding, spec)
    return {"float_bytes": float_bytes, "pruned_sparse_bytes": pruned_bytes, "int8_bytes": int8_bytes,
            "compressed_bytes": final, "ratio": final / float_bytes}


# ---------------------------------------------------------------------------
# serialization and size accounting


def encode_quantized(qm: QuantizedModel, sparse: bool = True) -> bytes:
    records = []
    for path in qm.weights:
        wq = qm.weight_qparams[path]
        records.append(container.TensorRecord(f"{path}.weight", qm.weights[path], (wq.scale, wq.zero_point)))
        records.append(container.TensorRecord(f"{path}.bias", qm.biases[path], (qm.bias_scales[path], 0)))
    meta = {"spec": qm.spec.to_dict(),
            "activations": {k: [v.scale, v.zero_point] for k, v in qm.act_qparams.items()}}
    return container.encode(container.MAGIC_QUANT, records, meta, sparse)


def decode_quantized(buf: bytes) -> QuantizedModel:
    _, records, meta = container.decode(buf, container.MAGIC_QUANT)
    spec = ModelSpec.from_dict(meta["spec"])
    weights, wq, biases, bscales = {}, {}, {}, {}
    for r in records:
        path, kind = r.path.rsplit(".", 1)
        if kind == "weight":
            weights[path] = r.data.astype(np.int8)
            wq[path] = QuantParams(r.qparams[0], r.qparams[1])
        else:
            biases[path] = r.data.astype(np.int32)
            bscales[path] = r.qparams[0]
    act = {k: QuantParams(float(s), int(z)) for k, (s, z) in meta["activations"].items()}
    nonzero = {k: int(np.count_nonzero(w)) for k, w in weights.items()}
    return QuantizedModel(spec, weights, wq, biases, bscales, act, nonzero)


def save_quantized(path, qm: QuantizedModel, sparse: bool = True) -> int:
    data = encode_quantized(qm, sparse)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def load_quantized(path) -> QuantizedModel:
    try:
        with open(path, "rb") as fh:
            return decode_quantized(fh.read())
    except FileNotFoundError:
        raise DataError(f"missing model file {path}") from None


def model_size_bytes(model, sparse_encoding: bool = False, spec: ModelSpec | None = None) -> int:
    """Exact size of the serialized container for float parameters or a QuantizedModel."""
    if isinstance(model, QuantizedModel):
        return len(encode_quantized(model, sparse_encoding))
    return len(container.encode_parameters(model, spec, sparse_encoding))
