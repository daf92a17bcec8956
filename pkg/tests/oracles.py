"""Independent reference implementations used as test oracles.

Everything here is written with explicit Python loops over the model
description so that it shares no array code with the engine under test.
"""

import math

import numpy as np

from fogedge.nn.model import Dense, DepthwiseConv1D, GlobalStats, ReLU


def _conv_loop(x, w, b, layer):
    c_in, t_in = len(x), len(x[0])
    left, right = layer.pads(t_in)
    padded = [[0.0] * left + list(row) + [0.0] * right for row in x]
    out = []
    for o in range(c_in * layer.multiplier):
        src = padded[o // layer.multiplier]
        row = []
        t = 0
        while t + layer.kernel_len <= len(src):
            acc = b[o]
            for k in range(layer.kernel_len):
                acc += w[o][k] * src[t + k]
            row.append(acc)
            t += layer.stride
        out.append(row)
    return out


def forward_oracle(spec, params, window) -> float:
    """Probability for one window, evaluated with scalar loops."""
    feats = []
    for br in spec.branches:
        scale = spec.scale(br.modality)
        h = [[float(v) * scale for v in row] for row in window.blocks[br.modality]]
        paths = iter(br.conv_paths())
        for layer in br.layers:
            if isinstance(layer, DepthwiseConv1D):
                path, _ = next(paths)
                h = _conv_loop(h, params[f"{path}.weight"].tolist(), params[f"{path}.bias"].tolist(), layer)
            elif isinstance(layer, ReLU):
                h = [[v if v > 0 else 0.0 for v in row] for row in h]
            elif isinstance(layer, GlobalStats):
                h = [sum(row) / len(row) for row in h]
        feats.extend(h)
    z = feats
    dense = iter(spec.dense_paths())
    for layer in spec.head:
        if isinstance(layer, Dense):
            path, _ = next(dense)
            W, b = params[f"{path}.weight"].tolist(), params[f"{path}.bias"].tolist()
            z = [b[i] + sum(W[i][j] * z[j] for j in range(len(z))) for i in range(len(W))]
        elif isinstance(layer, ReLU):
            z = [v if v > 0 else 0.0 for v in z]
    logit = max(-30.0, min(30.0, z[0]))
    return 1.0 / (1.0 + math.exp(-logit))


def finite_difference_grads(loss_fn, params, eps=1e-5):
    """Central differences of ``loss_fn(params)`` for every parameter entry."""
    grads = {}
    for key, value in params.items():
        g = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            orig = value[idx]
            value[idx] = orig + eps
            up = loss_fn(params)
            value[idx] = orig - eps
            down = loss_fn(params)
            value[idx] = orig
            g[idx] = (up - down) / (2 * eps)
        grads[key] = g
    return grads


def pair_count_auc(scores, labels) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie) by enumerating every pair."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = 0.0
    for p in pos:
        for n in neg:
            wins += 1.0 if p > n else 0.5 if p == n else 0.0
    return wins / (len(pos) * len(neg))


def binomial_tail_exact(p, n):
    """Majority-vote error probability as an exact sum over all 2**n pulse patterns."""
    total = 0 * p
    for pattern in range(1 << n):
        k = bin(pattern).count("1")
        if k > n // 2:
            total += p ** k * (1 - p) ** (n - k)
    return total
