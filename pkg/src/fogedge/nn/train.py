"""Deterministic mini-batch trainer (Adam or SGD with momentum)."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, TrainingError
from .engine import Parameters, backward_batch, check_parameters, init_parameters
from .model import ModelSpec, labels_of, stack_inputs

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 30
    seed: int = 0
    # "auto" -> (#neg / #pos) on the training set; a number is used as-is
    pos_weight: float | str = "auto"
    frozen: tuple = ()
    # "bce" on 0/1 (or soft) labels, or "logit_mse" against target logits
    loss: str = "bce"

    def validate(self) -> "TrainConfig":
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.loss not in ("bce", "logit_mse"):
            raise ConfigError(f"unknown loss {self.loss!r}")
        if not (self.pos_weight == "auto" or float(self.pos_weight) > 0):
            raise ConfigError("pos_weight must be 'auto' or a positive number")
        return self


@dataclass
class TrainResult:
    params: Parameters
    losses: list = field(default_factory=list)
    pos_weight: float = 1.0


def resolve_pos_weight(cfg: TrainConfig, labels: np.ndarray) -> float:
    if cfg.pos_weight != "auto":
        return float(cfg.pos_weight)
    n_pos = int(np.sum(labels > 0.5))
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return 1.0
    return n_neg / n_pos


class _Adam:
    def __init__(self, cfg: TrainConfig):
        self.cfg, self.m, self.v, self.t = cfg, {}, {}, 0

    def step(self, params, grads):
        c = self.cfg
        self.t += 1
        corr1 = 1 - c.beta1 ** self.t
        corr2 = 1 - c.beta2 ** self.t
        for k, g in grads.items():
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m *= c.beta1
            m += (1 - c.beta1) * g
            v *= c.beta2
            v += (1 - c.beta2) * g * g
            params[k] -= c.lr * (m / corr1) / (np.sqrt(v / corr2) + c.eps)


class _SGD:
    def __init__(self, cfg: TrainConfig):
        self.cfg, self.vel = cfg, {}

    def step(self, params, grads):
        for k, g in grads.items():
            vel = self.vel.setdefault(k, np.zeros_like(g))
            vel *= self.cfg.momentum
            vel += g
            params[k] -= self.cfg.lr * vel


def train(spec: ModelSpec, dataset, cfg: TrainConfig = TrainConfig(),
          init: Parameters | None = None, masks: dict | None = None) -> TrainResult:
    """Train on labeled windows. Bit-reproducible for a fixed (spec, dataset, cfg, init).

    ``masks`` (boolean keep-masks keyed like the parameters) pins masked
    entries at zero after every update, for fine-tuning a pruned model.
    """
    cfg.validate()
    if not dataset:
        raise TrainingError("empty training set")
    inputs = stack_inputs(spec, dataset)
    labels = labels_of(dataset)
    return train_arrays(spec, inputs, labels, cfg, init, masks)


def train_arrays(spec: ModelSpec, inputs: dict, labels: np.ndarray, cfg: TrainConfig,
                 init: Parameters | None = None, masks: dict | None = None) -> TrainResult:
    cfg.validate()
    n = len(labels)
    if n == 0:
        raise TrainingError("empty training set")
    if init is None:
        params = init_parameters(spec, cfg.seed)
    else:
        check_parameters(spec, init)
        params = {k: np.array(v, dtype=np.float64) for k, v in init.items()}
    masks = masks or {}
    for k, m in masks.items():
        params[k] *= m
    pos_weight = resolve_pos_weight(cfg, labels) if cfg.loss == "bce" else 1.0
    opt = _Adam(cfg) if cfg.optimizer == "adam" else _SGD(cfg)
    rng = np.random.default_rng([cfg.seed, 0x5EED])
    losses = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for i in range(0, n, cfg.batch_size):
            idx = np.sort(order[i:i + cfg.batch_size])
            batch = {m: x[idx] for m, x in inputs.items()}
            grads, loss = backward_batch(spec, params, batch, labels[idx], pos_weight, cfg.frozen, cfg.loss)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch starting {i}")
            opt.step(params, grads)
            for k, m in masks.items():
                params[k] *= m
            total += loss * len(idx)
        losses.append(total / n)
        log.debug("epoch %d loss %.5f", epoch, losses[-1])
    return TrainResult(params, losses, pos_weight)
