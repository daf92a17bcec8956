"""Forward and backward passes over numpy arrays.

Parameters are a plain ``dict[str, np.ndarray]`` keyed by layer path, e.g.
``"eeg_lo.conv0.weight"`` or ``"head.dense2.bias"``. Batches are dicts of
(batch, channels, samples) arrays per modality, as built by ``stack_inputs``.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from ..errors import ShapeError
from ..signals import Window
from .model import Dense, DepthwiseConv1D, GlobalStats, ModelSpec, ReLU, labels_of, stack_inputs

LOGIT_CLAMP = 30.0

Parameters = dict


def sigmoid(z):
    return expit(np.asarray(z, dtype=np.float64))


def relu(x):
    return np.maximum(x, 0.0)


def _as_batch(x: np.ndarray) -> np.ndarray:
    return x[None] if x.ndim == 2 else x


def depthwise_conv1d_forward(x, kernel, bias, stride: int = 1, padding: str = "valid",
                             multiplier: int = 1) -> np.ndarray:
    """Per-channel 1-D correlation. ``x`` is (C, T) or (B, C, T); kernel is (C*multiplier, K)."""
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    single = x.ndim == 2
    xb = _as_batch(x)
    c_in, t_in = xb.shape[1], xb.shape[2]
    k = kernel.shape[1]
    layer = DepthwiseConv1D(k, stride, c_in, padding, multiplier)
    if kernel.shape[0] != c_in * multiplier or bias.shape != (c_in * multiplier,):
        raise ShapeError(f"kernel {kernel.shape} / bias {bias.shape} do not match {c_in} channels")
    if stride < 1:
        raise ShapeError("stride must be >= 1")
    out = _conv_fwd(xb, kernel, bias, layer)
    return out[0] if single else out


def _pad(x, layer: DepthwiseConv1D):
    left, right = layer.pads(x.shape[2])
    if left or right:
        x = np.pad(x, ((0, 0), (0, 0), (left, right)))
    if layer.multiplier > 1:
        x = np.repeat(x, layer.multiplier, axis=1)
    return x


def _conv_fwd(x, w, b, layer: DepthwiseConv1D):
    xp = _pad(x, layer)
    if xp.shape[2] < layer.kernel_len:
        raise ShapeError(f"input of length {x.shape[2]} too short for kernel {layer.kernel_len}")
    view = sliding_window_view(xp, layer.kernel_len, axis=2)[:, :, ::layer.stride, :]
    return np.einsum("bctk,ck->bct", view, w) + b[None, :, None]


def _conv_bwd(g, x, w, layer: DepthwiseConv1D, need_dx: bool):
    xp = _pad(x, layer)
    k = layer.kernel_len
    view = sliding_window_view(xp, k, axis=2)[:, :, ::layer.stride, :]
    gw = np.einsum("bct,bctk->ck", g, view)
    gb = g.sum(axis=(0, 2))
    if not need_dx:
        return None, gw, gb
    # input gradient: full correlation of the stride-dilated gradient with the flipped kernel
    b, c, t_out = g.shape
    span = layer.stride * (t_out - 1) + 1
    gd = np.zeros((b, c, span + 2 * (k - 1)))
    gd[:, :, k - 1:k - 1 + span:layer.stride] = g
    gxp = np.zeros_like(xp)
    gxp[:, :, :span + k - 1] = np.einsum("bctk,ck->bct", sliding_window_view(gd, k, axis=2), w[:, ::-1])
    if layer.multiplier > 1:
        gxp = gxp.reshape(b, c // layer.multiplier, layer.multiplier, -1).sum(axis=2)
    left, _ = layer.pads(x.shape[2])
    return gxp[:, :, left:left + x.shape[2]], gw, gb


def dense_forward(x, W, b) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if W.ndim != 2 or x.shape[-1] != W.shape[1] or b.shape != (W.shape[0],):
        raise ShapeError(f"dense shapes x{x.shape} W{W.shape} b{b.shape} do not chain")
    return x @ W.T + b


def _branch_forward(spec: ModelSpec, branch, params, x, caches):
    h = x * spec.scale(branch.modality)
    paths = iter(branch.conv_paths())
    for layer in branch.layers:
        if isinstance(layer, DepthwiseConv1D):
            path, _ = next(paths)
            caches.append(("conv", path, layer, h))
            h = _conv_fwd(h, params[f"{path}.weight"], params[f"{path}.bias"], layer)
        elif isinstance(layer, ReLU):
            caches.append(("relu", None, layer, h))
            h = relu(h)
        elif isinstance(layer, GlobalStats):
            caches.append(("pool", None, layer, h))
            h = h.mean(axis=2)
    return h


def forward_logits(spec: ModelSpec, params: Parameters, inputs: dict, keep_cache: bool = False):
    """Logits for a stacked batch; optionally the caches needed by ``backward_batch``."""
    branch_caches, feats = [], []
    for br in spec.branches:
        if br.modality not in inputs:
            raise ShapeError(f"batch lacks {br.modality.value} input")
        caches = []
        feats.append(_branch_forward(spec, br, params, inputs[br.modality], caches))
        branch_caches.append(caches)
    h = np.concatenate(feats, axis=1)
    head_cache = []
    dense = iter(spec.dense_paths())
    for layer in spec.head:
        if isinstance(layer, Dense):
            path, _ = next(dense)
            head_cache.append(("dense", path, h))
            h = h @ params[f"{path}.weight"].T + params[f"{path}.bias"]
        elif isinstance(layer, ReLU):
            head_cache.append(("relu", None, h))
            h = relu(h)
    logits = h[:, 0]
    if keep_cache:
        return logits, (branch_caches, [f.shape[1] for f in feats], head_cache)
    return logits


def predict_proba(spec: ModelSpec, params: Parameters, windows, batch_size: int = 256) -> np.ndarray:
    out = []
    for i in range(0, len(windows), batch_size):
        chunk = windows[i:i + batch_size]
        out.append(sigmoid(np.clip(forward_logits(spec, params, stack_inputs(spec, chunk)),
                                   -LOGIT_CLAMP, LOGIT_CLAMP)))
    return np.concatenate(out) if out else np.zeros(0)


def forward(spec: ModelSpec, params: Parameters, w: Window) -> float:
    """Probability of FoG for one window."""
    return float(predict_proba(spec, params, [w])[0])


def bce_loss(logits, labels, pos_weight: float = 1.0):
    """Mean class-weighted binary cross-entropy and its gradient w.r.t. the logits."""
    z = np.clip(logits, -LOGIT_CLAMP, LOGIT_CLAMP)
    y = np.asarray(labels, dtype=np.float64)
    wt = np.where(y > 0.5, pos_weight, 1.0)
    softplus = np.maximum(z, 0) + np.log1p(np.exp(-np.abs(z)))
    n = len(y)
    loss = float(np.sum(wt * (softplus - y * z)) / n)
    inside = (logits > -LOGIT_CLAMP) & (logits < LOGIT_CLAMP)
    dz = wt * (sigmoid(z) - y) / n * inside
    return loss, dz


def logit_mse_loss(logits, targets):
    """Mean of 0.5*(z - target)^2; used to match a pruned model's logits to a reference."""
    d = np.asarray(logits, dtype=np.float64) - np.asarray(targets, dtype=np.float64)
    n = len(d)
    return float(0.5 * np.sum(d * d) / n), d / n


def backward_batch(spec: ModelSpec, params: Parameters, inputs: dict, labels,
                   pos_weight: float = 1.0, frozen=(), loss: str = "bce") -> tuple[dict, float]:
    """Gradients for a stacked batch. ``loss="logit_mse"`` treats ``labels`` as target logits."""
    logits, (branch_caches, widths, head_cache) = forward_logits(spec, params, inputs, keep_cache=True)
    if loss == "logit_mse":
        loss, g = logit_mse_loss(logits, labels)
    else:
        loss, g = bce_loss(logits, labels, pos_weight)
    if not math.isfinite(loss):
        return {}, loss
    frozen = tuple(frozen)
    grads = {}
    g = g[:, None]
    for kind, path, h in reversed(head_cache):
        if kind == "dense":
            grads[f"{path}.weight"] = g.T @ h
            grads[f"{path}.bias"] = g.sum(axis=0)
            g = g @ params[f"{path}.weight"]
        else:
            g = g * (h > 0)
    offsets = np.cumsum([0] + widths)
    for bi, (br, caches) in enumerate(zip(spec.branches, branch_caches)):
        gb = g[:, offsets[bi]:offsets[bi + 1]]
        if frozen and all(k.startswith(frozen) for k in params if k.startswith(br.name + ".")):
            continue
        first_conv = next((i for i, c in enumerate(caches) if c[0] == "conv"), None)
        for i in range(len(caches) - 1, -1, -1):
            kind, path, layer, h = caches[i]
            if kind == "pool":
                gb = np.repeat(gb[:, :, None] / h.shape[2], h.shape[2], axis=2)
            elif kind == "relu":
                gb = gb * (h > 0)
            else:
                gx, gw, gbias = _conv_bwd(gb, h, params[f"{path}.weight"], layer, need_dx=i != first_conv)
                grads[f"{path}.weight"] = gw
                grads[f"{path}.bias"] = gbias
                gb = gx
    if frozen:
        grads = {k: v for k, v in grads.items() if not k.startswith(frozen)}
    return grads, loss


def backward(spec: ModelSpec, params: Parameters, batch, pos_weight: float = 1.0) -> tuple[dict, float]:
    """Gradients of the mean weighted BCE over a list of labeled windows, plus the loss."""
    if not batch:
        raise ShapeError("batch must be non-empty")
    return backward_batch(spec, params, stack_inputs(spec, batch), labels_of(batch), pos_weight)


def init_parameters(spec: ModelSpec, seed: int) -> Parameters:
    """Uniform(+-sqrt(2/fan_in)) weights, zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)
    params = {}
    for key, shape in spec.weight_shapes().items():
        if key.endswith(".bias"):
            params[key] = np.zeros(shape)
        else:
            fan_in = shape[1]
            bound = math.sqrt(2.0 / fan_in)
            params[key] = rng.uniform(-bound, bound, size=shape)
    return params


def zero_parameters(spec: ModelSpec) -> Parameters:
    return {k: np.zeros(s) for k, s in spec.weight_shapes().items()}


def check_parameters(spec: ModelSpec, params: Parameters) -> None:
    shapes = spec.weight_shapes()
    if set(shapes) != set(params):
        raise ShapeError(f"parameter keys differ from model: {sorted(set(shapes) ^ set(params))}")
    for k, s in shapes.items():
        if tuple(params[k].shape) != s:
            raise ShapeError(f"{k}: shape {params[k].shape}, expected {s}")
