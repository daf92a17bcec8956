"""Adapters turning trained models into central-node inference callables."""

from __future__ import annotations

from ..compression import QuantizedModel, quantized_forward
from ..nn.engine import predict_proba
from .sources import RecordingSource


class QuantizedInference:
    """Scores assembled windows with the integer model."""

    def __init__(self, model: QuantizedModel, source: RecordingSource):
        self.model = model
        self.source = source

    def __call__(self, assembled) -> float:
        return quantized_forward(self.model, self.source.to_window(assembled))


class FloatInference:
    """Scores assembled windows with float parameters."""

    def __init__(self, spec, params, source: RecordingSource):
        self.spec, self.params, self.source = spec, params, source

    def __call__(self, assembled) -> float:
        return float(predict_proba(self.spec, self.params, [self.source.to_window(assembled)])[0])


class ConstantInference:
    """Fixed score, for timing studies that do not need a model."""

    def __init__(self, score: float = 1.0):
        self.score = float(score)

    def __call__(self, assembled) -> float:
        return self.score
