"""Frame-level control classifier.

A linear softmax scores every frame on its own; the sequence prediction is the
mean of the per-frame distributions. Shuffling frames cannot change the
prediction, which makes it the order-blind reference point.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import layers as L
from ..errors import ConfigError
from ..params import ParameterSet
from ..tensor import Tensor, as_tensor
from .ensemble import ensemble_mean


@dataclass(frozen=True)
class FrameBaselineConfig:
    num_classes: int = 101

    def __post_init__(self):
        if self.num_classes < 1:
            raise ConfigError("num_classes must be positive")


def init_params(cfg: FrameBaselineConfig, dim: int, rng) -> tuple[ParameterSet, dict]:
    params = ParameterSet()
    L.init_fc(params, rng, "classifier", dim, cfg.num_classes)
    return params, {}


def frame_logits(x, cfg: FrameBaselineConfig, params: ParameterSet) -> Tensor:
    """Scores of shape (B * N, C), frames of one sequence contiguous."""
    x = as_tensor(x)
    b, d, n = x.shape
    rows = x.transpose(0, 2, 1).reshape(b * n, d)
    return L.fc(params, "classifier", rows)


def predict_proba(x, cfg: FrameBaselineConfig, params: ParameterSet) -> np.ndarray:
    arr = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=float)
    single = arr.ndim == 2
    if single:
        arr = arr[None]
    b, _, n = arr.shape
    frame_probs = L.softmax(frame_logits(arr, cfg, params)).data.reshape(b, n, cfg.num_classes)
    out = ensemble_mean([frame_probs[:, t] for t in range(n)])
    return out[0] if single else out
