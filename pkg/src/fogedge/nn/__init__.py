"""Minimal neural-network engine for the multi-branch depth-wise CNN."""

from .engine import (backward, backward_batch, dense_forward, depthwise_conv1d_forward, forward,
                     forward_logits, init_parameters, predict_proba, sigmoid, zero_parameters)
from .model import (BranchSpec, Concat, Dense, DepthwiseConv1D, GlobalStats, ModelSpec, ReLU,
                    Sigmoid, default_model_spec, fit_input_scales, stack_inputs)
from .train import TrainConfig, TrainResult, train

__all__ = [
    "BranchSpec", "Concat", "Dense", "DepthwiseConv1D", "GlobalStats", "ModelSpec", "ReLU", "Sigmoid",
    "TrainConfig", "TrainResult", "backward", "backward_batch", "default_model_spec", "dense_forward",
    "depthwise_conv1d_forward", "fit_input_scales", "forward", "forward_logits", "init_parameters",
    "predict_proba", "sigmoid", "stack_inputs", "train", "zero_parameters",
]
